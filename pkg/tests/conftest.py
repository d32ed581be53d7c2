import numpy as np

from blockboost.data import DataMatrix

# verdict lines collected by the acceptance tests, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def dense_to_matrix(x: np.ndarray, labels=None) -> DataMatrix:
    """Dense array to DataMatrix, dropping NaN cells (NaN = missing)."""
    x = np.asarray(x, dtype=np.float64)
    n, m = x.shape
    if labels is None:
        labels = np.zeros(n)
    rows = []
    for i in range(n):
        present = np.flatnonzero(np.isfinite(x[i]))
        rows.append(list(zip(present.tolist(), x[i, present].tolist())))
    return DataMatrix.from_rows(rows, labels, n_features=m)
