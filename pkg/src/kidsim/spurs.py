"""Spur tables: lists of spectral lines with absolute power and an origin label."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import NamedTuple

from .signal import Spectrum, dbm_to_vpeak


class SpurRow(NamedTuple):
    frequency: float
    power_dbm: float
    origin: str = ""

    @property
    def amplitude(self) -> float:
        """Peak volts of a sine with this power into 50 ohm."""
        return dbm_to_vpeak(self.power_dbm)


@dataclass(frozen=True)
class SpurTable:
    rows: tuple = ()

    def __post_init__(self):
        rows = tuple(SpurRow(float(f), float(p), str(o)) for f, p, o in self.rows)
        seen = set()
        for r in rows:
            if r.frequency < 0:
                raise ValueError(f"negative spur frequency {r.frequency}")
            key = (r.frequency, r.origin)
            if key in seen:
                raise ValueError(f"duplicate spur row {key}")
            seen.add(key)
        object.__setattr__(self, "rows", rows)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @property
    def frequencies(self):
        return [r.frequency for r in self.rows]

    def sorted(self) -> "SpurTable":
        return SpurTable(sorted(self.rows, key=lambda r: (r.frequency, r.origin)))

    def near(self, frequency, tol):
        """Rows within ``tol`` Hz of ``frequency``."""
        return [r for r in self.rows if abs(r.frequency - frequency) <= tol]

    def power_at(self, frequency, tol):
        hits = self.near(frequency, tol)
        if not hits:
            return None
        return max(hits, key=lambda r: r.power_dbm).power_dbm

    @classmethod
    def from_spectrum(cls, spec: Spectrum, threshold_dbm, origin="measured"):
        """Every bin of a dBm spectrum at or above ``threshold_dbm``."""
        if spec.reference != "dBm":
            raise ValueError("spur tables are built from dBm spectra")
        return cls(tuple((f, p, origin) for f, p in spec.lines(threshold_dbm)))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["frequency_hz", "power_dbm", "origin"])
        for r in self.rows:
            writer.writerow([f"{r.frequency:.3f}", f"{r.power_dbm:.6f}", r.origin])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "SpurTable":
        """Parse CSV text or a path; lines starting with '#' are comments."""
        if hasattr(source, "read"):
            text = source.read()
        elif isinstance(source, str) and "\n" in source:
            text = source
        else:
            with open(source, newline="") as fh:
                text = fh.read()
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        reader = csv.DictReader(lines)
        missing = {"frequency_hz", "power_dbm"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"spur CSV lacks columns {sorted(missing)}")
        rows = [
            (float(r["frequency_hz"]), float(r["power_dbm"]), r.get("origin") or "")
            for r in reader
        ]
        return cls(tuple(rows))
