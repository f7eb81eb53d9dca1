# Ambient helpers: logging, constants, config loading, parallelism
