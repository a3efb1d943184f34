"""Parsing, keyword flagging, and detrending of raw observation streams.

Input files are UTF-8 delimited text (comma or tab separated) with a header
row.  Tweet-like records are flagged as "hot" by substring matching against a
keyword lexicon; station readings are detrended by ordinary least squares so
that the residual field downstream is zero-mean.
"""

from __future__ import annotations

import csv
import io
import math
import unicodedata
from dataclasses import dataclass, field

import numpy as np


class SchemaError(ValueError):
    """A required column is missing from the header."""


class RankDeficientError(ValueError):
    """The detrending design matrix is not full rank."""


@dataclass(frozen=True)
class SpaceTimePoint:
    """A location-timestamp pair: the coordinate of every observation."""

    lon: float
    lat: float
    t: float  # minutes since the study-window origin

    def __post_init__(self):
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise ValueError("coordinates must be finite")
        if not math.isfinite(self.t) or self.t < 0:
            raise ValueError("t must be finite and non-negative")

    @property
    def day(self) -> int:
        return int(self.t // 1440)

    @property
    def time_of_day(self) -> float:
        return self.t % 1440.0


@dataclass(frozen=True)
class TweetRecord:
    text: str
    user_id: str
    where_when: SpaceTimePoint
    is_retweet: bool = False
    covariates: tuple = ()  # precomputed per-record columns, in file order


@dataclass(frozen=True)
class Lexicon:
    """Deduplicated set of non-empty substring patterns, NFKC-normalized."""

    keywords: frozenset

    def __post_init__(self):
        if any(not k for k in self.keywords):
            raise ValueError("lexicon contains an empty pattern")

    @classmethod
    def from_patterns(cls, patterns) -> "Lexicon":
        normalized = {unicodedata.normalize("NFKC", p) for p in patterns if p}
        return cls(frozenset(normalized))

    @classmethod
    def default(cls) -> "Lexicon":
        """The bundled hotness/discomfort lexicon."""
        from importlib.resources import files

        text = files("fieldfuse").joinpath("data/hot_lexicon.txt").read_text("utf-8")
        patterns = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
        return cls.from_patterns(p for p in patterns if p)

    @classmethod
    def from_file(cls, path) -> "Lexicon":
        patterns = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    patterns.append(line)
        return cls.from_patterns(patterns)


@dataclass(frozen=True)
class StationReading:
    station_id: str
    where_when: SpaceTimePoint
    temperature: float

    def __post_init__(self):
        if not math.isfinite(self.temperature):
            raise ValueError("temperature must be finite")


@dataclass
class DetrendModel:
    """OLS fit removing deterministic mean structure from readings."""

    coefficients: np.ndarray
    covariate_names: list
    residual_sd: float

    def __post_init__(self):
        if len(self.coefficients) != len(self.covariate_names):
            raise ValueError("one coefficient per named covariate")

    def predict(self, covariates: np.ndarray) -> np.ndarray:
        return np.asarray(covariates, dtype=float) @ self.coefficients


@dataclass(frozen=True)
class RowError:
    line_number: int
    message: str


_REQUIRED_TWEET_FIELDS = ("text", "user", "lon", "lat", "time")


def _open_reader(stream):
    """Return a csv reader over `stream`, sniffing comma vs tab delimiters."""
    if isinstance(stream, (str, bytes)):
        stream = io.StringIO(stream if isinstance(stream, str) else stream.decode("utf-8"))
    first = stream.readline()
    if not first:
        return None, None
    delimiter = "\t" if first.count("\t") >= first.count(",") and "\t" in first else ","
    header = next(csv.reader([first], delimiter=delimiter))
    return csv.reader(stream, delimiter=delimiter), [h.strip() for h in header]


def _column_index(header, schema, key, optional=False):
    name = schema.get(key)
    if name is None:
        if optional:
            return None
        raise SchemaError(f"schema does not map required field {key!r}")
    try:
        return header.index(name)
    except ValueError:
        if optional:
            return None
        raise SchemaError(f"mapped column {name!r} for field {key!r} not in header {header}")


_TRUTHY = {"1", "true", "t", "yes"}


def parse_tweets(stream, schema):
    """Parse tweet-like records from delimited text.

    Parameters
    ----------
    stream : file-like, str
        UTF-8 delimited text with a header row.
    schema : dict
        Maps logical field names ('text', 'user', 'lon', 'lat', 'time',
        optionally 'retweet' and 'covariates') to column names.  'covariates'
        maps to a list of numeric column names ingested verbatim.

    Returns
    -------
    (records, errors)
        `records` is a list of TweetRecord; `errors` lists RowError entries
        for malformed rows (1-based line numbers, header is line 1).
        Retweets are retained but flagged; filtering is a separate step.
    """
    reader, header = _open_reader(stream)
    if reader is None:
        return [], []
    idx = {k: _column_index(header, schema, k) for k in _REQUIRED_TWEET_FIELDS}
    rt_idx = _column_index(header, schema, "retweet", optional=True)
    cov_idx = [header.index(c) if c in header else None for c in schema.get("covariates", [])]
    if any(i is None for i in cov_idx):
        missing = [c for c, i in zip(schema["covariates"], cov_idx) if i is None]
        raise SchemaError(f"covariate columns {missing} not in header {header}")

    records, errors = [], []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            point = SpaceTimePoint(
                lon=float(row[idx["lon"]]),
                lat=float(row[idx["lat"]]),
                t=float(row[idx["time"]]),
            )
            records.append(
                TweetRecord(
                    text=row[idx["text"]],
                    user_id=row[idx["user"]],
                    where_when=point,
                    is_retweet=(row[rt_idx].strip().lower() in _TRUTHY) if rt_idx is not None else False,
                    covariates=tuple(float(row[i]) for i in cov_idx),
                )
            )
        except (ValueError, IndexError) as exc:
            errors.append(RowError(line_no, str(exc)))
    return records, errors


def parse_stations(stream, schema):
    """Parse station readings; schema maps 'station', 'lon', 'lat', 'time',
    'temperature' (and optionally 'covariates') to column names."""
    reader, header = _open_reader(stream)
    if reader is None:
        return [], []
    keys = ("station", "lon", "lat", "time", "temperature")
    idx = {k: _column_index(header, schema, k) for k in keys}
    cov_idx = [_column_index(header, {"c": c}, "c") for c in schema.get("covariates", [])]

    records, errors, covs = [], [], []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            point = SpaceTimePoint(
                lon=float(row[idx["lon"]]),
                lat=float(row[idx["lat"]]),
                t=float(row[idx["time"]]),
            )
            records.append(
                StationReading(
                    station_id=row[idx["station"]],
                    where_when=point,
                    temperature=float(row[idx["temperature"]]),
                )
            )
            covs.append([float(row[i]) for i in cov_idx])
        except (ValueError, IndexError) as exc:
            errors.append(RowError(line_no, str(exc)))
    if cov_idx:
        return records, errors, np.asarray(covs, dtype=float)
    return records, errors


def is_retweet(record: TweetRecord) -> bool:
    """Retweet predicate, kept separate from parsing so callers may count raw."""
    return record.is_retweet


def match_hot(tweet: TweetRecord, lexicon: Lexicon) -> int:
    """1 iff any lexicon pattern occurs as a substring of the NFKC-normalized text."""
    if not lexicon.keywords:
        raise ValueError("lexicon is empty")
    text = unicodedata.normalize("NFKC", tweet.text)
    return int(any(k in text for k in lexicon.keywords))


def detrend(readings, covariates):
    """OLS-detrend station temperatures against per-reading covariates.

    Parameters
    ----------
    readings : list of StationReading
    covariates : (n, p) array
        Per-reading covariate rows, including the intercept column if wanted.

    Returns
    -------
    (DetrendModel, residuals)
        Residuals are temperature minus fitted value; they are the zero-mean
        field values modeled downstream.
    """
    X = np.asarray(covariates, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.array([r.temperature for r in readings], dtype=float)
    n, p = X.shape
    if n <= p:
        raise ValueError(f"need more readings ({n}) than covariates ({p})")
    rank = np.linalg.matrix_rank(X)
    if rank < p:
        # pivoted QR exposes which trailing columns are dependent
        from scipy.linalg import qr

        _, _, piv = qr(X, mode="economic", pivoting=True)
        bad = sorted(piv[rank:].tolist())
        raise RankDeficientError(f"design matrix is rank deficient; collinear columns: {bad}")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    dof = max(n - p, 1)
    model = DetrendModel(
        coefficients=beta,
        covariate_names=[f"x{j}" for j in range(p)],
        residual_sd=float(np.sqrt(resid @ resid / dof)),
    )
    return model, resid.tolist()
