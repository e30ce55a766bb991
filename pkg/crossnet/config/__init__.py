# Configuration module for crossnet
