#coding=utf8


class ProsrError(Exception):
    """ Base class of every error raised on purpose by this repo. """
    exit_code = 1


class InputError(ProsrError):
    """ Unreadable input or schema violation, rendered as `line 7: field: message`. """
    exit_code = 2

    def __init__(self, message: str, line_no: int = None, field: str = None):
        self.message, self.line_no, self.field = message, line_no, field
        prefix = ''
        if line_no is not None: prefix += f'line {line_no:d}: '
        if field is not None: prefix += f'{field}: '
        super(InputError, self).__init__(prefix + message)


class ConfigError(InputError):

    def __init__(self, key: str, message: str):
        super(ConfigError, self).__init__(message, field=key)
        self.key = key


class TrajectoryError(InputError):
    """ Invalid numeric input for the trajectory operations, names the offending index. """
    pass


class EmptyResultError(ProsrError):
    exit_code = 3
