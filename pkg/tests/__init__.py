# Tests module for crossnet
