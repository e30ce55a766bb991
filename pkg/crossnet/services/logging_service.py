import logging
import json
from datetime import datetime, timezone
from typing import Any, Dict, Optional
from crossnet.config.settings import settings
import os


LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class LoggingService:
    """Structured JSON event log next to the regular application log."""

    def __init__(self):
        self.event_logger = logging.getLogger("events")
        self.event_logger.setLevel(logging.INFO)
        self.log_dir: Optional[str] = None

    def configure(self, log_dir: Optional[str] = None, log_level: Optional[str] = None):
        """Attach file handlers. Called once by the CLI."""
        log_dir = log_dir or settings.log_dir
        level = (log_level or settings.log_level).upper()
        os.makedirs(log_dir, exist_ok=True)

        logging.basicConfig(
            level=getattr(logging, level, logging.INFO),
            format=LOG_FORMAT,
            handlers=[
                logging.FileHandler(os.path.join(log_dir, 'app.log')),
                logging.StreamHandler()
            ]
        )

        if self.log_dir != log_dir:
            for handler in list(self.event_logger.handlers):
                self.event_logger.removeHandler(handler)
                handler.close()
            event_handler = logging.FileHandler(os.path.join(log_dir, 'events.log'))
            event_handler.setFormatter(logging.Formatter('%(asctime)s - %(message)s'))
            self.event_logger.addHandler(event_handler)
            self.log_dir = log_dir

    def _emit(self, event: str, level: int = logging.INFO, **fields: Any):
        log_data: Dict[str, Any] = {
            "event": event,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        log_data.update(fields)
        self.event_logger.log(level, json.dumps(log_data, default=str))

    def log_train_step(self, step: int, loss: float, lr: float, grad_norm: float):
        """Log one optimizer step."""
        self._emit("train_step", step=step, loss=loss, lr=lr, grad_norm=grad_norm)

    def log_epoch_metrics(self, epoch: int, metrics: Dict[str, Any]):
        self._emit("epoch_metrics", epoch=epoch, metrics=metrics)

    def log_training_finished(self, mode: str, steps: int, wall_time: float, final_loss: float):
        self._emit("training_finished", mode=mode, steps=steps,
                   wall_time_seconds=wall_time, final_loss=final_loss)

    def log_dataset_written(self, path: str, train: int, test: int, seed: int):
        self._emit("dataset_written", path=path, train_pairs=train, test_pairs=test, seed=seed)

    def log_checkpoint(self, path: str, entries: int, saved: bool = True):
        """Log checkpoint save or load."""
        self._emit("checkpoint_saved" if saved else "checkpoint_loaded", path=path, entries=entries)

    def log_orientation(self, best_bin: int, best_energy: float, n_bins: int):
        self._emit("orientation_estimated", best_bin=best_bin,
                   best_energy=best_energy, n_bins=n_bins)

    def log_geocalibration(self, candidates: int, best_offset: Any, best_bin: int, best_energy: float):
        self._emit("geocalibration", candidates=candidates, best_offset=best_offset,
                   best_bin=best_bin, best_energy=best_energy)

    def log_verify_property(self, suite: str, name: str, passed: bool, detail: str):
        self._emit("verify_property", suite=suite, property=name, passed=passed, detail=detail)

    def log_error(self, command: str, error: str, context: str = ""):
        """Log error events."""
        self._emit("error", logging.ERROR, command=command, error=error, context=context)


# Global service instance
logging_service = LoggingService()
