import io
from datetime import date

import numpy as np
import pytest

from mobrisk.traces import DAY, parse_traces

D0 = int(np.datetime64("2013-01-01T00:00:00", "s").astype(np.int64))
H = 3600


def ts(day: int, hour: float = 0) -> str:
    t = D0 + day * DAY + int(hour * H)
    return np.datetime_as_string(np.datetime64(t, "s")) + "Z"


def csv_text(rows) -> str:
    """rows: (user, day, hour, region)."""
    lines = ["user_id,timestamp,region_id"]
    lines += [f"{u},{ts(d, h)},{r}" for u, d, h, r in rows]
    return "\n".join(lines) + "\n"


def traces(rows, **kw):
    return parse_traces(io.StringIO(csv_text(rows)), **kw)


@pytest.fixture
def report(capsys):
    """Print a status line straight to the terminal, bypassing capture."""

    def emit(line: str) -> None:
        with capsys.disabled():
            print(f"\n{line}", flush=True)

    return emit


@pytest.fixture
def start_date():
    return date(2013, 1, 1)
