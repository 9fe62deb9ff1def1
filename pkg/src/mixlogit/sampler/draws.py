"""Retained posterior draws and their on-disk format.

A draws directory holds

* ``meta.json`` -- config echo, content hashes, retained counts, layout;
* ``columns.txt`` -- one column name per line;
* ``chain_<c>.f64`` -- per chain, a row-major matrix of little-endian float64
  with one row per retained draw.

Column order: normal-block means and variances (WTP space only), then for
each mixture component its weight, mean vector and full covariance (row
major), then the DP concentration (DP only), then person parameters
``theta[n, d]`` (person-major), then the total log-likelihood.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from ..errors import IntegrityError, SpecMismatch

FORMAT_VERSION = 1
DTYPE = np.dtype("<f8")


@dataclass(frozen=True)
class DrawLayout:
    K: int  # mixture components
    R: int  # mixing-block dimension
    Rn: int  # normal-block dimension
    N: int  # persons
    D: int  # parameters per person
    has_alpha: bool = False

    def _sizes(self):
        return [
            ("normal_zeta", self.Rn),
            ("normal_omega", self.Rn),
            ("pi", self.K),
            ("zeta", self.K * self.R),
            ("omega", self.K * self.R * self.R),
            ("alpha", int(self.has_alpha)),
            ("theta", self.N * self.D),
            ("loglik", 1),
        ]

    @property
    def slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for name, size in self._sizes():
            out[name] = slice(start, start + size)
            start += size
        return out

    @property
    def n_columns(self) -> int:
        return sum(size for _, size in self._sizes())

    def columns(self) -> list[str]:
        cols = [f"normal_zeta[{r}]" for r in range(self.Rn)]
        cols += [f"normal_omega[{r}]" for r in range(self.Rn)]
        cols += [f"pi[{k}]" for k in range(self.K)]
        cols += [f"zeta[{k},{r}]" for k in range(self.K) for r in range(self.R)]
        cols += [f"omega[{k},{r},{s}]" for k in range(self.K) for r in range(self.R) for s in range(self.R)]
        if self.has_alpha:
            cols.append("alpha")
        cols += [f"theta[{n},{d}]" for n in range(self.N) for d in range(self.D)]
        cols.append("loglik")
        return cols

    def pack(self, normal_zeta, normal_omega, pi, zeta, omega, alpha, theta, loglik) -> np.ndarray:
        parts = [np.ravel(normal_zeta), np.ravel(normal_omega), np.ravel(pi), np.ravel(zeta), np.ravel(omega)]
        if self.has_alpha:
            parts.append([alpha])
        parts += [np.ravel(theta), [loglik]]
        return np.concatenate(parts)

    def to_dict(self) -> dict:
        return {"K": self.K, "R": self.R, "Rn": self.Rn, "N": self.N, "D": self.D, "has_alpha": self.has_alpha}


@dataclass
class PosteriorDraws:
    """Retained draws of one or more chains.

    Accessors return arrays with the draw axis first, pooled over chains in
    chain order.
    """

    layout: DrawLayout
    chains: list[np.ndarray]
    meta: dict = field(default_factory=dict)

    @cached_property
    def matrix(self) -> np.ndarray:
        return np.vstack(self.chains) if self.chains else np.zeros((0, self.layout.n_columns))

    @property
    def n_draws(self) -> int:
        return sum(c.shape[0] for c in self.chains)

    @property
    def chain_labels(self) -> np.ndarray:
        return np.concatenate([np.full(c.shape[0], i) for i, c in enumerate(self.chains)])

    def _block(self, name: str) -> np.ndarray:
        return self.matrix[:, self.layout.slices[name]]

    def pi(self) -> np.ndarray:
        return self._block("pi")

    def zeta(self) -> np.ndarray:
        L = self.layout
        return self._block("zeta").reshape(-1, L.K, L.R)

    def omega(self) -> np.ndarray:
        L = self.layout
        return self._block("omega").reshape(-1, L.K, L.R, L.R)

    def alpha(self) -> np.ndarray:
        return self._block("alpha")[:, 0] if self.layout.has_alpha else np.zeros(0)

    def normal_zeta(self) -> np.ndarray:
        return self._block("normal_zeta")

    def normal_omega(self) -> np.ndarray:
        return self._block("normal_omega")

    def theta(self) -> np.ndarray:
        L = self.layout
        return self._block("theta").reshape(-1, L.N, L.D)

    def loglik(self) -> np.ndarray:
        return self._block("loglik")[:, 0]

    @property
    def mixing(self) -> dict:
        return self.meta.get("mixing", {})

    @property
    def utility(self) -> dict:
        return self.meta.get("utility", {})

    def with_chains(self, chains: list[np.ndarray]) -> "PosteriorDraws":
        return PosteriorDraws(self.layout, chains, dict(self.meta))

    def check_mixing(self, mixing) -> None:
        stored = self.mixing
        if stored and (stored.get("kind") != mixing.kind or stored.get("K") != mixing.K):
            raise SpecMismatch(f"draws were produced with {stored.get('kind')}(K={stored.get('K')}), "
                               f"not {mixing.kind}(K={mixing.K})")
        if self.layout.K != mixing.K:
            raise SpecMismatch(f"draws have {self.layout.K} components, mixing spec has {mixing.K}")

    # ------------------------------------------------------------------ io

    def save(self, path) -> None:
        """Write atomically: build in a temp directory, then rename into place."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(dir=path.parent, prefix=f".{path.name}."))
        try:
            hashes = []
            for c, draws in enumerate(self.chains, start=1):
                raw = np.ascontiguousarray(draws, dtype=DTYPE).tobytes()
                (tmp / f"chain_{c}.f64").write_bytes(raw)
                hashes.append(hashlib.sha256(raw).hexdigest())
            (tmp / "columns.txt").write_text("\n".join(self.layout.columns()) + "\n", encoding="utf-8")
            meta = dict(self.meta)
            meta.update({
                "format_version": FORMAT_VERSION,
                "layout": self.layout.to_dict(),
                "n_columns": self.layout.n_columns,
                "retained": [int(c.shape[0]) for c in self.chains],
                "chain_sha256": hashes,
            })
            (tmp / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            if path.exists():
                old = path.with_name(f".{path.name}.old")
                if old.exists():
                    shutil.rmtree(old)
                os.replace(path, old)
                os.replace(tmp, path)
                shutil.rmtree(old)
            else:
                os.replace(tmp, path)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise

    @classmethod
    def load(cls, path) -> "PosteriorDraws":
        path = Path(path)
        meta = json.loads((path / "meta.json").read_text(encoding="utf-8"))
        layout = DrawLayout(**meta["layout"])
        chains = []
        hashes = meta.get("chain_sha256", [])
        for c, n in enumerate(meta["retained"], start=1):
            data = (path / f"chain_{c}.f64").read_bytes()
            if c <= len(hashes) and hashlib.sha256(data).hexdigest() != hashes[c - 1]:
                raise IntegrityError(f"{path / f'chain_{c}.f64'} does not match its recorded checksum")
            raw = np.frombuffer(data, dtype=DTYPE)
            if raw.size != n * layout.n_columns:
                raise IntegrityError(f"{path / f'chain_{c}.f64'} holds {raw.size} values, "
                                     f"expected {n} x {layout.n_columns}")
            chains.append(raw.reshape(n, layout.n_columns).astype(float))
        return cls(layout, chains, meta)
