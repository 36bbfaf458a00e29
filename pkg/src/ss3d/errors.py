"""Exception types raised by the ss3d readers, converters and evaluator."""


class SS3DError(Exception):
    """Base class for every error raised by this package."""


class IoFailure(SS3DError, OSError):
    pass


class MalformedRecordLength(SS3DError, ValueError):
    def __init__(self, path, size, record=16):
        super().__init__(f"{path}: {size} bytes is not a multiple of {record}")
        self.path = path
        self.size = size


class MissingKey(SS3DError, KeyError):
    def __init__(self, name):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"missing calibration key {self.name!r}"


class MatrixShapeError(SS3DError, ValueError):
    pass


class FieldCountError(SS3DError, ValueError):
    def __init__(self, line_no, count, expected):
        super().__init__(f"line {line_no}: expected {expected} fields, got {count}")
        self.line_no = line_no


class ParseError(SS3DError, ValueError):
    def __init__(self, line_no, field, detail=""):
        msg = f"line {line_no}: cannot parse field {field!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.line_no = line_no
        self.field = field


class UnsupportedFormat(SS3DError, ValueError):
    pass


class DimensionMismatch(SS3DError, ValueError):
    pass


class NonFinitePrediction(SS3DError, ValueError):
    pass


class EmptyGroundTruth(SS3DError, ValueError):
    pass


class FrameMismatch(SS3DError, ValueError):
    def __init__(self, stems):
        self.stems = sorted(stems)
        super().__init__("detection files without ground truth: " + ", ".join(self.stems))


class ConfigError(SS3DError, ValueError):
    pass
