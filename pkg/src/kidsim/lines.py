"""
Frequency-domain bookkeeping for deterministic spectral lines.

A line ``(f, P)`` stands for the real signal ``Re(P * exp(2j*pi*f*t))``:
amplitude ``|P|`` and cosine phase ``angle(P)``.  At ``f == 0`` the line is
the constant ``Re(P)``.  Each line also carries ``prov``, the set of comb
tone indices it was derived from (``ENVIRONMENT`` marks LO feedthrough,
offset and crosstalk lines), and a short ``label``.

Products of lines follow ``cos(a) cos(b) = (cos(a+b) + cos(a-b)) / 2``,
so memoryless polynomial stages can be predicted exactly, including
phases, without simulating a record.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EMPTY = frozenset()

# Provenance token for sources that do not depend on the comb (LO
# feedthrough, offsets, crosstalk).
ENVIRONMENT = -1


def _objarray(items):
    out = np.empty(len(items), dtype=object)
    out[:] = list(items)
    return out


@dataclass(frozen=True, eq=False)
class LineSet:
    freq: np.ndarray
    phasor: np.ndarray
    prov: np.ndarray
    label: np.ndarray

    @classmethod
    def empty(cls):
        return cls(np.zeros(0), np.zeros(0, dtype=complex), _objarray([]), _objarray([]))

    @classmethod
    def from_lists(cls, freqs, phasors, provs=None, labels=None):
        freqs = np.asarray(freqs, dtype=float)
        n = freqs.size
        provs = [_EMPTY] * n if provs is None else [frozenset(p) for p in provs]
        labels = [""] * n if labels is None else list(labels)
        return cls(freqs, np.asarray(phasors, dtype=complex), _objarray(provs), _objarray(labels)).normalized()

    @classmethod
    def from_comb(cls, comb, label="tone", phase_shift=0.0):
        """One line per tone; ``prov`` is the tone index."""
        f = comb.frequencies
        p = comb.amplitudes * np.exp(1j * (comb.phases + phase_shift))
        return cls.from_lists(f, p, [(i,) for i in range(len(f))], [label] * len(f))

    def __len__(self):
        return self.freq.size

    @property
    def amplitude(self) -> np.ndarray:
        """Peak amplitude; for DC (and folded fs/2) lines the signed level's magnitude."""
        return np.where(self.freq == 0, np.abs(self.phasor.real), np.abs(self.phasor))

    def normalized(self) -> "LineSet":
        """Fold negative frequencies onto positive ones and make DC real."""
        neg = self.freq < 0
        freq = np.abs(self.freq)
        ph = np.where(neg, np.conj(self.phasor), self.phasor)
        ph = np.where(freq == 0, ph.real + 0j, ph)
        return LineSet(freq, ph, self.prov, self.label)

    def take(self, mask) -> "LineSet":
        return LineSet(self.freq[mask], self.phasor[mask], self.prov[mask], self.label[mask])

    def scaled(self, gain) -> "LineSet":
        return LineSet(self.freq, self.phasor * gain, self.prov, self.label)

    def relabeled(self, label) -> "LineSet":
        return LineSet(self.freq, self.phasor, self.prov, _objarray([label] * len(self)))

    def __add__(self, other: "LineSet") -> "LineSet":
        return LineSet(
            np.concatenate([self.freq, other.freq]),
            np.concatenate([self.phasor, other.phasor]),
            _objarray(list(self.prov) + list(other.prov)),
            _objarray(list(self.label) + list(other.label)),
        )

    def band(self, lo, hi) -> "LineSet":
        return self.take((self.freq >= lo) & (self.freq <= hi))

    def above(self, floor) -> "LineSet":
        return self.take(self.amplitude >= floor)

    def fold(self, sample_rate) -> "LineSet":
        """Alias every line into [0, fs/2] as a sampled record would.

        A sampled line at exactly fs/2 is ``Re(P) (-1)**n``, so its phasor
        is made real like a DC line.
        """
        f = np.mod(self.freq, sample_rate)
        hi = f > sample_rate / 2
        f = np.where(hi, f - sample_rate, f)
        out = LineSet(f, self.phasor, self.prov, self.label).normalized()
        nyq = out.freq == sample_rate / 2
        if nyq.any():
            ph = np.where(nyq, out.phasor.real + 0j, out.phasor)
            out = LineSet(out.freq, ph, out.prov, out.label)
        return out

    def merged(self, resolution) -> "LineSet":
        """Sum lines that share a frequency bin and a provenance set."""
        if len(self) == 0:
            return self
        keys = np.round(self.freq / resolution).astype(np.int64)
        groups = {}
        for i, (k, p) in enumerate(zip(keys, self.prov)):
            groups.setdefault((int(k), p), []).append(i)
        freq, ph, prov, label = [], [], [], []
        for (k, p), idx in groups.items():
            idx = np.asarray(idx)
            freq.append(self.freq[idx[0]])
            ph.append(self.phasor[idx].sum())
            prov.append(p)
            labs = dict.fromkeys(self.label[idx])
            label.append("+".join(labs))
        return LineSet.from_lists(freq, ph, prov, label)

    def product(self, other: "LineSet", label, floor=0.0, targets=None, tol=0.0) -> "LineSet":
        """All sum and difference terms of ``self * other``.

        Terms below ``floor`` are dropped; with ``targets`` only terms within
        ``tol`` of one of the target frequencies are kept.  ``label=None``
        keeps the labels of ``self``.
        """
        if len(self) == 0 or len(other) == 0:
            return LineSet.empty()
        out = []
        targets = None if targets is None else np.sort(np.asarray(targets, dtype=float))
        rows = max(1, 2_000_000 // max(1, len(other)))
        for start in range(0, len(self), rows):
            a = self.take(slice(start, start + rows))
            fa = a.freq[:, None]
            pa = a.phasor[:, None]
            for sign in (1, -1):
                f = fa + sign * other.freq[None, :]
                q = 0.5 * pa * (other.phasor[None, :] if sign > 0 else np.conj(other.phasor)[None, :])
                keep = np.abs(q) >= floor
                if targets is not None:
                    keep &= _near(np.abs(f), targets, tol)
                ia, ib = np.nonzero(keep)
                if ia.size == 0:
                    continue
                provs = [a.prov[i] | other.prov[j] for i, j in zip(ia, ib)]
                labels = a.label[ia] if label is None else _objarray([label] * ia.size)
                out.append(LineSet(f[ia, ib], q[ia, ib], _objarray(provs), labels).normalized())
        if not out:
            return LineSet.empty()
        res = out[0]
        for extra in out[1:]:
            res = res + extra
        return res


def _near(f, targets, tol):
    idx = np.searchsorted(targets, f)
    lo = np.abs(f - targets[np.clip(idx - 1, 0, targets.size - 1)])
    hi = np.abs(f - targets[np.clip(idx, 0, targets.size - 1)])
    return np.minimum(lo, hi) <= tol


def power_lines(lines: LineSet, order: int, coefficient, label, floor=0.0, targets=None, tol=0.0) -> LineSet:
    """Lines of ``coefficient * x**order`` for ``x`` made of ``lines``.

    Partial products that cannot reach ``floor`` even when multiplied by
    the largest remaining factors are pruned early.
    """
    if order < 1 or len(lines) == 0 or coefficient == 0:
        return LineSet.empty()
    x = lines
    amax = float(np.max(x.amplitude)) if len(x) else 0.0
    acc = x.scaled(coefficient)
    for step in range(2, order + 1):
        remaining = order - step
        stage_floor = floor / (amax**remaining) if amax > 0 else 0.0
        last = step == order
        acc = acc.product(x, label, floor=stage_floor, targets=targets if last else None, tol=tol)
        acc = acc.merged(1e-3)
    if order == 1:
        acc = acc.above(floor)
        if targets is not None:
            acc = acc.take(_near(acc.freq, np.sort(np.asarray(targets, float)), tol))
    return acc.relabeled(label)

