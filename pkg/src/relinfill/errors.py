"""Exception hierarchy. ``exit_code`` is what the CLI returns for each category."""


class RelinfillError(Exception):
    category = "internal"
    exit_code = 1


class ConfigError(RelinfillError):
    category = "config"
    exit_code = 2


class VocabularyError(ConfigError):
    pass


class DataError(RelinfillError):
    category = "data"
    exit_code = 3


class SchemaError(DataError):
    pass


class TemplateError(DataError):
    pass


class NumericError(RelinfillError):
    category = "numeric"
    exit_code = 4


class ConstraintError(RelinfillError):
    """A token path that does not exist in the relation trie."""


class BoundsError(RelinfillError, IndexError):
    pass


class ContractError(RelinfillError, ValueError):
    pass


class OracleError(RelinfillError):
    pass
