class ContractError(ValueError):
    """Raised when a precondition on shapes, ranges or ordering is violated."""


class TrainingDiverged(ArithmeticError):
    def __init__(self, epoch, cost):
        super().__init__(f"training diverged at epoch {epoch} (cost={cost})")
        self.epoch = epoch
        self.cost = cost


class SimulationError(RuntimeError):
    """Wraps a module error with the (day, sensor) where it happened."""

    def __init__(self, day, sensor, cause):
        where = f"day {day}" + (f", sensor {sensor}" if sensor is not None else "")
        super().__init__(f"{where}: {cause}")
        self.day = day
        self.sensor = sensor
        self.cause = cause
