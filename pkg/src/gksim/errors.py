"""Exception hierarchy shared by the toolchain and the simulator.

Two families matter to callers: ValidationError covers everything that can
be rejected before a kernel runs (bad encodings, assembly problems, config
and launch validation), RuntimeFault covers aborts raised while a kernel is
executing.  The CLI maps them to exit codes 2 and 3 respectively.
"""


class GkError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(GkError):
    """Static error: encoding, assembly, configuration, or launch setup."""


class RuntimeFault(GkError):
    """Error raised while a kernel is executing; aborts the run."""


# --- instruction encoding / decoding -----------------------------------------

class IllegalOpcode(ValidationError):
    pass


class ReservedBitsSet(ValidationError):
    pass


class TruncatedInstruction(ValidationError):
    pass


class UnencodableForm(ValidationError):
    pass


class ReservedCondCode(ValidationError):
    pass


class NotAnAluOpcode(ValidationError):
    pass


# --- assembler ----------------------------------------------------------------

class AsmError(ValidationError):
    """Base for assembler diagnostics; message carries the source line."""


class UnknownMnemonic(AsmError):
    pass


class UndefinedLabel(AsmError):
    pass


class DuplicateLabel(AsmError):
    pass


class RegisterOutOfRange(AsmError):
    pass


class SharedMemTooLarge(AsmError):
    pass


# --- configuration / launch ----------------------------------------------------

class ConfigError(ValidationError):
    pass


class InvalidSpCount(ConfigError):
    pass


class UnsupportedInstruction(ValidationError):
    pass


class Unlaunchable(ValidationError):
    pass


class ContainerError(ValidationError):
    """Malformed .gk kernel container."""


class ParamsTooLarge(ValidationError):
    pass


# --- runtime ---------------------------------------------------------------------

class StackOverflow(RuntimeFault):
    pass


class EmptyStackSync(RuntimeFault):
    pass


class UnalignedAccess(RuntimeFault):
    pass


class OutOfBounds(RuntimeFault):
    pass


class InvalidPc(RuntimeFault):
    pass


class Deadlock(RuntimeFault):
    pass
