"""One modeling task: weather drivers, static characteristics, sparse labels.

A task is a (watershed, scale) pair. Arrays are node-major:

    x [n, T, F]  daily meteorological features (F defaults to 7)
    c [n, K]     static stream characteristics with availability mask
    y [n, T]     water temperature in deg C with observation mask

Feature/characteristic normalization stats are computed once over the
source tasks and frozen; the same stats are applied to every target
task so nothing in the pipeline peeks at target observations.
"""

import csv
import datetime
from pathlib import Path

import numpy as np

from .errors import DataError
from .stream_graph import load_network, write_network

STD_FLOOR = 1e-6


def _date_range(start_date, days):
    d0 = datetime.date.fromisoformat(start_date)
    return [(d0 + datetime.timedelta(days=k)).isoformat() for k in range(days)]


def _stable_seed(seed, task_id):
    # per-task stream so the same seed draws independently per dataset
    return np.random.SeedSequence([int(seed), *[ord(ch) for ch in task_id]])


class TaskDataset:
    def __init__(self, task_id, network, x, c, c_mask, y, y_mask,
                 start_date, day_offset=0, normalized=False):
        self.task_id = task_id
        self.network = network
        self.x = np.asarray(x, dtype=np.float64)
        self.c = np.asarray(c, dtype=np.float64)
        self.c_mask = np.asarray(c_mask, dtype=bool)
        self.y = np.asarray(y, dtype=np.float64)
        self.y_mask = np.asarray(y_mask, dtype=bool)
        self.start_date = start_date
        self.day_offset = day_offset
        self.normalized = normalized
        n = network.n_segments
        if self.x.ndim != 3 or self.x.shape[0] != n:
            raise DataError(f"x shape {self.x.shape} does not match {n} segments")
        if self.c.shape[0] != n or self.c_mask.shape != self.c.shape:
            raise DataError("characteristics arrays inconsistent")
        if self.y.shape != (n, self.x.shape[1]) or self.y_mask.shape != self.y.shape:
            raise DataError("label arrays inconsistent")
        if np.any(~np.isfinite(self.y[self.y_mask])):
            raise DataError("non-finite observed temperature")

    @property
    def n_segments(self):
        return self.network.n_segments

    @property
    def n_days(self):
        return self.x.shape[1]

    @property
    def n_features(self):
        return self.x.shape[2]

    @property
    def n_chars(self):
        return self.c.shape[1]

    def replace(self, **kw):
        args = dict(task_id=self.task_id, network=self.network, x=self.x,
                    c=self.c, c_mask=self.c_mask, y=self.y, y_mask=self.y_mask,
                    start_date=self.start_date, day_offset=self.day_offset,
                    normalized=self.normalized)
        args.update(kw)
        return TaskDataset(**args)

    def time_slice(self, lo, hi):
        """View of days [lo, hi) carrying its offset from the task start."""
        if not (0 <= lo < hi <= self.n_days):
            raise DataError(f"bad time slice [{lo}, {hi}) for T={self.n_days}")
        return self.replace(x=self.x[:, lo:hi], y=self.y[:, lo:hi],
                            y_mask=self.y_mask[:, lo:hi],
                            day_offset=self.day_offset + lo)

    def strip_labels(self):
        """Label-free copy: the forward path for zero-shot use can provably not read y."""
        return self.replace(y=np.zeros_like(self.y), y_mask=np.zeros_like(self.y_mask))


class NormStats:
    """Frozen per-feature means/stds for x and c, from source tasks only."""

    def __init__(self, x_mean, x_std, c_mean, c_std):
        self.x_mean = np.asarray(x_mean, dtype=np.float64)
        self.x_std = np.maximum(np.asarray(x_std, dtype=np.float64), STD_FLOOR)
        self.c_mean = np.asarray(c_mean, dtype=np.float64)
        self.c_std = np.maximum(np.asarray(c_std, dtype=np.float64), STD_FLOOR)


def build_norm_stats(tasks):
    xs = np.concatenate([t.x.reshape(-1, t.n_features) for t in tasks], axis=0)
    x_mean = np.nanmean(xs, axis=0)
    x_std = np.nanstd(xs, axis=0)
    K = tasks[0].n_chars
    c_mean = np.zeros(K)
    c_std = np.ones(K)
    cs = np.concatenate([t.c for t in tasks], axis=0)
    ms = np.concatenate([t.c_mask for t in tasks], axis=0)
    for k in range(K):
        col = cs[ms[:, k], k]
        if col.size:
            c_mean[k] = col.mean()
            c_std[k] = col.std()
    return NormStats(x_mean, x_std, c_mean, c_std)


def normalize(task, stats):
    """Z-score x and c with frozen stats; masked/missing entries become 0.

    Missing x entries (NaN) are imputed to the source feature mean
    before scoring, i.e. they come out exactly 0. Labels are untouched.
    Normalizing twice is a contract violation.
    """
    if task.normalized:
        raise DataError(f"task {task.task_id!r} is already normalized")
    x = task.x.copy()
    nan = ~np.isfinite(x)
    if nan.any():
        x[nan] = np.broadcast_to(stats.x_mean, x.shape)[nan]
    x = (x - stats.x_mean) / stats.x_std
    c = (task.c - stats.c_mean) / stats.c_std
    c = np.where(task.c_mask, c, 0.0)
    return task.replace(x=x, c=c, normalized=True)


def window(task, length, stride):
    """Chop the task into fixed-length windows: floor((T-length)/stride)+1 of them."""
    if length < 2:
        raise DataError("window length must be >= 2 (delayed gating needs t-1)")
    if length > task.n_days:
        raise DataError(f"window length {length} > task days {task.n_days}")
    if stride < 1:
        raise DataError("stride must be positive")
    starts = range(0, task.n_days - length + 1, stride)
    return [task.time_slice(s, s + length) for s in starts]


def subsample_observations(task, sparsity, seed):
    """Keep exactly round(sparsity * observed) mask entries, uniformly by seed."""
    if not (0 < sparsity <= 1):
        raise DataError(f"sparsity {sparsity} outside (0, 1]")
    obs = np.argwhere(task.y_mask)
    if obs.shape[0] == 0:
        raise DataError(f"task {task.task_id!r} has no observations to subsample")
    n_keep = int(np.rint(sparsity * obs.shape[0]))
    rng = np.random.default_rng(_stable_seed(seed, task.task_id))
    chosen = rng.choice(obs.shape[0], size=n_keep, replace=False)
    mask = np.zeros_like(task.y_mask)
    mask[obs[chosen, 0], obs[chosen, 1]] = True
    return task.replace(y_mask=mask)


def mask_characteristics(task, n_keep, seed):
    """Mark all but n_keep characteristic columns unavailable, per-task at random."""
    K = task.n_chars
    if not (0 <= n_keep <= K):
        raise DataError(f"n_keep {n_keep} outside [0, {K}]")
    rng = np.random.default_rng(_stable_seed(seed, task.task_id))
    dropped = rng.choice(K, size=K - n_keep, replace=False)
    c_mask = task.c_mask.copy()
    c_mask[:, dropped] = False
    return task.replace(c_mask=c_mask)


def train_test_split(task, train_frac=0.7, test_frac=0.25):
    """Proportional date split: train head, test tail, gap in between."""
    T = task.n_days
    n_train = int(round(train_frac * T))
    n_test = int(round(test_frac * T))
    if n_train < 2 or n_test < 2 or n_train + n_test > T:
        raise DataError(f"bad split fractions for T={T}")
    return task.time_slice(0, n_train), task.time_slice(T - n_test, T)


# ---------------------------------------------------------------------------
# CSV export/import. Floats are written with repr() so a round trip is
# bit-exact; empty characteristic cells mean "unavailable".

def write_task(task, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_network(task.network, out_dir / "segments.csv", out_dir / "distances.csv")
    dates = _date_range(task.start_date, task.n_days)
    F = task.n_features
    with open(out_dir / "features.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment_id", "date"] + [f"f{k + 1}" for k in range(F)])
        for i, sid in enumerate(task.network.segment_ids):
            for t, date in enumerate(dates):
                w.writerow([sid, date] + [repr(float(v)) for v in task.x[i, t]])
    with open(out_dir / "characteristics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment_id"] + [f"c{k + 1}" for k in range(task.n_chars)])
        for i, sid in enumerate(task.network.segment_ids):
            row = [repr(float(v)) if m else "" for v, m in zip(task.c[i], task.c_mask[i])]
            w.writerow([sid] + row)
    with open(out_dir / "observations.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment_id", "date", "temp_c"])
        for i, sid in enumerate(task.network.segment_ids):
            for t in np.flatnonzero(task.y_mask[i]):
                w.writerow([sid, dates[t], repr(float(task.y[i, t]))])


def load_task(task_dir, task_id=None):
    task_dir = Path(task_dir)
    network = load_network(task_dir / "segments.csv", task_dir / "distances.csv")
    n = network.n_segments

    rows = []
    with open(task_dir / "features.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        F = len(header) - 2
        for row in reader:
            rows.append(row)
    dates = sorted({r[1] for r in rows})
    _check_daily(dates)
    dindex = {d: t for t, d in enumerate(dates)}
    T = len(dates)
    x = np.full((n, T, F), np.nan)
    for row in rows:
        i = network.index[row[0]]
        t = dindex[row[1]]
        x[i, t] = [float(v) if v != "" else np.nan for v in row[2:]]

    with open(task_dir / "characteristics.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        K = len(header) - 1
        c = np.zeros((n, K))
        c_mask = np.zeros((n, K), dtype=bool)
        for row in reader:
            i = network.index[row[0]]
            for k, cell in enumerate(row[1:]):
                if cell != "":
                    c[i, k] = float(cell)
                    c_mask[i, k] = True

    y = np.zeros((n, T))
    y_mask = np.zeros((n, T), dtype=bool)
    with open(task_dir / "observations.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            i = network.index[row["segment_id"]]
            if row["date"] not in dindex:
                raise DataError(f"observation date {row['date']} outside feature range")
            t = dindex[row["date"]]
            y[i, t] = float(row["temp_c"])
            y_mask[i, t] = True

    if task_id is None:
        task_id = f"{network.watershed}_{network.scale}"
    return TaskDataset(task_id, network, x, c, c_mask, y, y_mask, start_date=dates[0])


def _check_daily(dates):
    prev = None
    for d in dates:
        cur = datetime.date.fromisoformat(d)
        if prev is not None and (cur - prev).days != 1:
            raise DataError(f"non-daily cadence between {prev} and {cur}")
        prev = cur
