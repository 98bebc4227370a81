"""Exception types raised across the pipeline."""


class PipelineError(Exception):
    """Base class for all pipeline errors."""


class MalformedXml(PipelineError):
    pass


class UnknownClassLabel(PipelineError):
    def __init__(self, title):
        super().__init__(f"unknown tissue class label: {title!r}")
        self.title = title


class DegenerateContour(PipelineError):
    pass


class WrongChannelCount(PipelineError):
    pass


class NonPositiveInput(PipelineError):
    pass


class EmptyOutput(PipelineError):
    pass


class InsufficientTissue(PipelineError):
    def __init__(self, count, required):
        super().__init__(f"only {count} tissue pixels above threshold, need >= {required}")
        self.count = count
        self.required = required


class DegenerateStains(PipelineError):
    pass


class NonFiniteInput(PipelineError):
    pass


class ZeroCount(PipelineError):
    pass


class MissingClass(PipelineError):
    pass


class MissingPatch(PipelineError):
    def __init__(self, patch_id):
        super().__init__(f"no score row for patch {patch_id!r}")
        self.patch_id = patch_id


class MalformedRow(PipelineError):
    def __init__(self, line_no, reason):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class SumNotOne(PipelineError):
    def __init__(self, line_no, total):
        super().__init__(f"line {line_no}: probabilities sum to {total}, expected 1 within 1e-4")
        self.line_no = line_no
        self.total = total


class EmptySlide(PipelineError):
    pass


class ClassTooSmall(PipelineError):
    def __init__(self, cls, n_slides):
        super().__init__(f"class {cls} has {n_slides} slide(s), need >= 2 to split")
        self.cls = cls


class OriginOutOfBounds(PipelineError):
    pass


class ConfigInvalid(PipelineError):
    pass
