# Services: logging, training, geocalibration, rendering, verification
