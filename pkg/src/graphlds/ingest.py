"""Station CSV ingestion and preprocessing for daily air-quality series.

Loads long-format daily station CSVs, applies variable-specific
transforms (none for temperature, log for particulates, log-log for
nitric oxide), drops stations with poor temporal coverage or too many
in-year gaps, imputes the rest by carrying the last observation
forward, and emits a lag-embedded trajectory panel plus the k-nearest
neighbor station graph.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from graphlds.graphs import Graph, knn_graph
from graphlds.systems import TrajectoryPanel

LOG_GUARD_EPS = 1e-6
REQUIRED_COLUMNS = ("station_id", "date", "value", "lat", "lon")


class IngestError(ValueError):
    """Malformed or inconsistent station data."""


@dataclass(frozen=True)
class StationTable:
    """Per-station daily series with coordinates.

    ``series`` maps station id to a date-indexed value series (sorted,
    strictly increasing dates).  ``transform_applied`` records which
    transform the values already carry so preprocessing is idempotent.
    """

    stations: pd.DataFrame  # columns: station_id, lat, lon
    series: dict
    variable: str = "custom"
    transform_applied: str | None = None
    flags: tuple = ()

    @property
    def station_ids(self) -> list:
        return list(self.stations["station_id"])

    def coords(self) -> list:
        return [(float(r.lat), float(r.lon)) for r in self.stations.itertuples()]


def load_station_csv(path_or_buffer, variable: str = "custom") -> StationTable:
    """Parse a long-format CSV with columns station_id, date, value, lat, lon.

    Rows arrive in any order; output series are date-sorted.  A
    duplicate (station, date) pair or an unparsable row is an error
    naming the offender.
    """
    df = pd.read_csv(path_or_buffer, dtype={"station_id": str})
    missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if missing:
        raise IngestError(f"missing columns: {missing}")
    dates = pd.to_datetime(df["date"], format="ISO8601", errors="coerce")
    bad = np.flatnonzero(dates.isna().to_numpy())
    if bad.size:
        raise IngestError(f"malformed date at line {bad[0] + 2}: {df['date'].iloc[bad[0]]!r}")
    values = pd.to_numeric(df["value"], errors="coerce")
    bad = np.flatnonzero(values.isna().to_numpy() & ~df["value"].isna().to_numpy())
    if bad.size:
        raise IngestError(f"malformed value at line {bad[0] + 2}: {df['value'].iloc[bad[0]]!r}")
    df = df.assign(date=dates, value=values)
    dup = df.duplicated(subset=["station_id", "date"], keep=False)
    if dup.any():
        row = df[dup].iloc[0]
        raise IngestError(f"duplicate (station, date) entry: {row['station_id']} on {row['date'].date()}")
    if "event_drop" in df.columns:
        df = df[~df["event_drop"].astype(bool)]
    station_rows = (
        df.groupby("station_id", sort=True)
        .agg(lat=("lat", "first"), lon=("lon", "first"))
        .reset_index()
    )
    series = {}
    for sid, grp in df.groupby("station_id", sort=True):
        s = grp.set_index("date")["value"].sort_index()
        series[sid] = s
    return StationTable(stations=station_rows, series=series, variable=variable)


def _apply_transform(values: pd.Series, transform: str) -> tuple[pd.Series, bool]:
    if transform == "none":
        return values, False
    if transform == "log":
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(values)
        if not np.all(np.isfinite(out.dropna())):
            raise IngestError("log transform produced non-finite values (need positive inputs)")
        return out, False
    if transform == "loglog":
        clipped = values.where(values > 0.0, LOG_GUARD_EPS)
        guarded = bool((values.dropna() <= 0.0).any())
        out = np.log(np.log(clipped + 1.0))
        if not np.all(np.isfinite(out.dropna())):
            raise IngestError("log-log transform produced non-finite values")
        return out, guarded
    raise IngestError(f"unknown transform {transform!r}")


def preprocess_series(
    t: StationTable,
    transform: str = "none",
    year: int | None = None,
    coverage_min: float = 0.75,
    year_missing_max: float = 0.05,
) -> StationTable:
    """Transform, filter, and impute the station series.

    Stations need at least ``coverage_min`` temporal coverage over the
    table's full daily span, and (when a target year is given) less
    than ``year_missing_max`` missing days within that year.  Remaining
    gaps are filled by last observation carried forward; a leading gap
    takes the first observed value and is flagged.  Reapplying with the
    same transform is a no-op on the values.
    """
    flags = list(t.flags)
    skip_transform = t.transform_applied == transform
    all_dates = pd.DatetimeIndex(sorted({d for s in t.series.values() for d in s.index}))
    if all_dates.empty:
        raise IngestError("no observations in table")
    full_span = pd.date_range(all_dates.min(), all_dates.max(), freq="D")
    kept_series = {}
    for sid in t.station_ids:
        s = t.series[sid]
        coverage = len(s) / len(full_span)
        if coverage < coverage_min:
            flags.append(f"dropped_low_coverage:{sid}")
            continue
        target = full_span
        if year is not None:
            target = pd.date_range(f"{year}-01-01", f"{year}-12-31", freq="D")
            in_year = s[(s.index >= target[0]) & (s.index <= target[-1])]
            missing_frac = 1.0 - len(in_year) / len(target)
            if missing_frac >= year_missing_max:
                flags.append(f"dropped_year_gaps:{sid}")
                continue
            s = in_year
        if not skip_transform:
            s, guarded = _apply_transform(s, transform)
            if guarded:
                flags.append(f"log_guard:{sid}")
        s = s.reindex(target)
        if s.iloc[0:1].isna().any():
            flags.append(f"leading_gap_backfill:{sid}")
        s = s.ffill().bfill()  # bfill only ever fills a leading gap
        if s.isna().any():
            raise IngestError(f"station {sid} has no observations in the target window")
        kept_series[sid] = s
    stations = t.stations[t.stations["station_id"].isin(kept_series)].reset_index(drop=True)
    if stations.empty:
        raise IngestError("no stations survive the coverage filters")
    return StationTable(
        stations=stations,
        series=kept_series,
        variable=t.variable,
        transform_applied=transform,
        flags=tuple(flags),
    )


def to_lds_panel(t: StationTable, window: tuple | None = None, d: int = 2) -> TrajectoryPanel:
    """Lag-1 embedding: the state at time t is (y_t, y_{t-1}).

    A scalar series of length n yields n-1 states, so a 2-dimensional
    linear system models the scalar dynamics with memory two.
    """
    if d != 2:
        raise IngestError("only the d=2 lag-1 embedding is supported")
    sids = t.station_ids
    series = []
    for sid in sids:
        s = t.series[sid]
        if window is not None:
            start, end = pd.Timestamp(window[0]), pd.Timestamp(window[1])
            s = s[(s.index >= start) & (s.index <= end)]
        if len(s) < 2:
            raise IngestError(f"window too short for station {sid}: need at least 2 days")
        series.append(s.to_numpy(dtype=float))
    n = min(len(s) for s in series)
    series = [s[:n] for s in series]
    m = len(sids)
    states = np.zeros((m, n - 1, 2))
    for l, y in enumerate(series):
        states[l, :, 0] = y[1:]
        states[l, :, 1] = y[:-1]
    return TrajectoryPanel(
        m=m,
        d=2,
        T_total=n - 2,
        states=states,
        meta={"stations": sids, "embedding": "lag1", "variable": t.variable},
    )


def station_graph(t: StationTable, k: int = 5) -> Graph:
    """k-nearest-neighbor graph over the retained stations."""
    g = knn_graph(t.coords(), k)
    return replace(g, kind="knn", params={**g.params, "stations": tuple(t.station_ids)})


def transform_for_variable(variable: str) -> str:
    return {"NO": "loglog", "PM10": "log", "TEMP": "none"}.get(variable, "none")


def training_window_start(n_steps: int, seed: int) -> int:
    """Training start for year-level runs, uniform over the first half."""
    if n_steps < 2:
        raise IngestError("record too short to draw a training start")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x57A7]))
    return int(rng.integers(0, n_steps // 2))
