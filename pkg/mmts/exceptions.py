# -*- coding: utf-8 -*-

# Exceptions raised by mmts.
#
# Every exception carries the process exit code the command line uses for it:
# - 2: argument or validation errors
# - 3: I/O errors (missing files, malformed MME payloads, broken run directories)
# - 4: numeric errors and divergence


class MMTSException(Exception):
    exit_code = 1


class ImproperlyConfigured(MMTSException, ValueError):
    exit_code = 2


class ArgumentError(MMTSException, ValueError):
    exit_code = 2


class DomainError(MMTSException, ValueError):
    exit_code = 2


class ValidationError(MMTSException, ValueError):
    exit_code = 2


class StorageException(MMTSException, IOError):
    exit_code = 3


class FormatError(StorageException):
    pass


class TruncationError(StorageException):
    pass


class NumericError(MMTSException, ArithmeticError):
    exit_code = 4


class DivergenceError(NumericError):
    def __init__(self, message, iteration=None):
        super(DivergenceError, self).__init__(message)
        self.iteration = iteration
