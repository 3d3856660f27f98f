from errors import DataIOError, DomainError, InfeasibleError, LabError, PreconditionError, StepError


def test_hierarchy():
    assert issubclass(DomainError, ValueError)
    for cls in (PreconditionError, InfeasibleError):
        assert issubclass(cls, DomainError)
    for cls in (StepError, DataIOError):
        assert issubclass(cls, LabError)


def test_step_error_keeps_index_and_cause():
    cause = FloatingPointError("overflow")
    err = StepError(4, cause)
    assert err.step_index == 4 and err.cause is cause
    assert str(err) == "step 4 failed: overflow"


def test_data_io_error_names_the_path():
    err = DataIOError("data/points.csv", "row 3 is short")
    assert err.path == "data/points.csv"
    assert str(err) == "data/points.csv: row 3 is short"
