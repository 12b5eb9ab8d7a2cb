# Shared config, logging and errors
