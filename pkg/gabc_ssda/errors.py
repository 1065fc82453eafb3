# This file holds custom error types raised by the library and the CLI.


class ConfigError(RuntimeError):
    """An error encountered during reading the config file.

    Args:
        msg: The message displayed to the user on error.
    """

    def __init__(self, msg: str):
        super(ConfigError, self).__init__("%s" % (msg,))


class InputError(ValueError):
    """Invalid arguments passed to a library operation, such as an empty batch
    or a class label outside [0, K).

    Args:
        msg: The message displayed to the user on error.
    """

    def __init__(self, msg: str):
        super(InputError, self).__init__("%s" % (msg,))


class NumericError(ArithmeticError):
    """A numeric degeneracy: a zero-norm feature, non-finite logits or a
    non-finite loss component.

    Args:
        msg: The message displayed to the user on error.

        where: The offending sample index or loss component name, if known.
    """

    def __init__(self, msg: str, where=None):
        self.where = where
        super(NumericError, self).__init__("%s" % (msg,))
