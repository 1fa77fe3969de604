class ConfigError(ValueError):
    """Invalid configuration or arguments (CLI exit code 1)."""


class TrainingError(RuntimeError):
    """Numerical failure during training (CLI exit code 2)."""


class CellTrainingError(TrainingError):
    def __init__(self, cell, generation, cause):
        super().__init__(f"cell {tuple(cell)} failed at generation {generation}: {cause}")
        self.cell = cell
        self.generation = generation
        self.cause = cause


class ScoringError(ArithmeticError):
    """Fréchet distance came out clearly negative."""
