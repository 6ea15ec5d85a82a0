"""Exception hierarchy; the CLI maps each family to an exit code."""


class CodMTLError(Exception):
    exit_code = 1


class ConfigError(CodMTLError, ValueError):
    exit_code = 1


class DataError(CodMTLError, ValueError):
    exit_code = 2


class SchemaError(DataError):
    pass


class NumericalError(CodMTLError, ArithmeticError):
    exit_code = 3
