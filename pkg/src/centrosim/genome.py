"""Genome geometry: chromosome specs, bin arithmetic, the centromere prior,
and block-structured trans-contact containers."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from importlib import resources

import numpy as np

BUILTIN_GENOMES = ("s_cerevisiae_16", "s_cerevisiae_3")


@dataclasses.dataclass(frozen=True)
class Chromosome:
    name: str
    length_bp: int


@dataclasses.dataclass(frozen=True)
class GenomeSpec:
    """Resolution plus ordered chromosome list; all geometry derives from this."""

    resolution_bp: int
    chromosomes: tuple[Chromosome, ...]

    def __post_init__(self):
        assert self.resolution_bp > 0
        assert len(self.chromosomes) >= 2, "trans contacts need at least two chromosomes"
        names = [c.name for c in self.chromosomes]
        assert len(set(names)) == len(names), "duplicate chromosome names"
        for c in self.chromosomes:
            # prior support [1, length-1] must have positive width
            assert c.length_bp >= 3, f"{c.name}: length_bp must be >= 3"

    @property
    def n_chrom(self) -> int:
        return len(self.chromosomes)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([c.length_bp for c in self.chromosomes], dtype=np.float64)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.chromosomes)

    def bins(self, i: int) -> int:
        """Number of bins of chromosome i at the spec resolution (ceil division)."""
        return -(-self.chromosomes[i].length_bp // self.resolution_bp)

    @property
    def total_bins(self) -> int:
        return sum(self.bins(i) for i in range(self.n_chrom))

    def bin_offsets(self) -> np.ndarray:
        """Start index of each chromosome's bins in the full-genome axis."""
        return np.concatenate([[0], np.cumsum([self.bins(i) for i in range(self.n_chrom)])])

    def block_shape(self, i: int, j: int) -> tuple[int, int]:
        return (self.bins(i), self.bins(j))

    def bp_to_bin(self, i: int, pos) -> int | np.ndarray:
        """Bin index containing position `pos` (bp) on chromosome i.

        floor(pos / resolution), clamped to the last bin so pos == length_bp
        (exact multiple of the resolution) stays in range.
        """
        pos = np.asarray(pos, dtype=np.float64)
        assert np.all((pos >= 0) & (pos <= self.chromosomes[i].length_bp))
        k = np.minimum(np.floor(pos / self.resolution_bp), self.bins(i) - 1)
        k = k.astype(np.int64)
        return int(k) if k.ndim == 0 else k

    def bin_to_bp(self, i: int, k) -> float | np.ndarray:
        """Center of bin k of chromosome i, in bp ((k + 0.5) * resolution)."""
        k = np.asarray(k)
        assert np.all((k >= 0) & (k < self.bins(i)))
        pos = (k + 0.5) * float(self.resolution_bp)
        return float(pos) if pos.ndim == 0 else pos

    # --- centromere prior: independent U[1, length-1] per chromosome ---

    def prior_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lows = np.ones(self.n_chrom, dtype=np.float64)
        highs = self.lengths - 1.0
        return lows, highs

    def sample_prior(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        """Draw centromere vectors from the prior.

        Returns shape (L,) when n is None, else (n, L).
        """
        lows, highs = self.prior_bounds()
        if n is None:
            return rng.uniform(lows, highs)
        return rng.uniform(lows, highs, size=(n, self.n_chrom))

    def prior_logpdf(self, theta) -> float | np.ndarray:
        """Log density of the uniform prior; -inf outside the support."""
        arr = np.asarray(theta, dtype=np.float64)
        single = arr.ndim == 1
        arr = np.atleast_2d(arr)
        lows, highs = self.prior_bounds()
        inside = np.all((arr >= lows) & (arr <= highs), axis=1)
        logp = np.where(inside, -np.sum(np.log(highs - lows)), -np.inf)
        return float(logp[0]) if single else logp

    def prior_contains(self, theta) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        lows, highs = self.prior_bounds()
        return np.all((theta >= lows) & (theta <= highs), axis=1)

    def digest(self) -> str:
        """Stable hash of the geometry, for artifact sidecars and checkpoints."""
        payload = json.dumps(spec_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def spec_to_dict(spec: GenomeSpec) -> dict:
    return {
        "resolution_bp": spec.resolution_bp,
        "chromosomes": [
            {"name": c.name, "length_bp": c.length_bp} for c in spec.chromosomes
        ],
    }


def spec_from_dict(d: dict) -> GenomeSpec:
    chroms = tuple(Chromosome(c["name"], int(c["length_bp"])) for c in d["chromosomes"])
    return GenomeSpec(resolution_bp=int(d["resolution_bp"]), chromosomes=chroms)


def load_genome(path) -> GenomeSpec:
    with open(path) as fh:
        return spec_from_dict(json.load(fh))


def save_genome(spec: GenomeSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(spec_to_dict(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")


def builtin_genome(name: str) -> GenomeSpec:
    """Load a genome spec shipped with the package (see BUILTIN_GENOMES)."""
    assert name in BUILTIN_GENOMES, f"unknown builtin genome {name!r}"
    ref = resources.files("centrosim.data").joinpath(f"{name}.json")
    return spec_from_dict(json.loads(ref.read_text()))


@dataclasses.dataclass
class ContactMap:
    """Trans-contact blocks keyed by chromosome pair (i, j) with i < j.

    Cis (diagonal) blocks are never stored; `block` exposes either orientation.
    """

    n_chrom: int
    blocks: dict[tuple[int, int], np.ndarray]

    def __post_init__(self):
        expected = {(i, j) for i in range(self.n_chrom) for j in range(i + 1, self.n_chrom)}
        assert set(self.blocks) == expected, "block keys must cover all pairs i < j"

    def block(self, i: int, j: int) -> np.ndarray:
        """Block with chromosome i on rows, j on columns (transposed view if i > j)."""
        assert i != j, "cis blocks are not modeled"
        if i < j:
            return self.blocks[(i, j)]
        return self.blocks[(j, i)].T

    def row(self, i: int) -> "BlockRow":
        return BlockRow(
            chrom=i,
            n_chrom=self.n_chrom,
            blocks={j: self.block(i, j) for j in range(self.n_chrom) if j != i},
        )

    def full_matrix(self, spec: GenomeSpec) -> np.ndarray:
        """Assemble the symmetric genome-wide matrix; cis blocks stay zero."""
        assert spec.n_chrom == self.n_chrom
        off = spec.bin_offsets()
        full = np.zeros((spec.total_bins, spec.total_bins), dtype=np.float64)
        for (i, j), blk in self.blocks.items():
            assert blk.shape == spec.block_shape(i, j)
            full[off[i]:off[i + 1], off[j]:off[j + 1]] = blk
            full[off[j]:off[j + 1], off[i]:off[i + 1]] = blk.T
        return full


@dataclasses.dataclass
class BlockRow:
    """One chromosome's row of trans blocks, oriented with that chromosome on rows."""

    chrom: int
    n_chrom: int
    blocks: dict[int, np.ndarray]

    def __post_init__(self):
        assert set(self.blocks) == set(range(self.n_chrom)) - {self.chrom}

    def partners(self) -> list[int]:
        return sorted(self.blocks)
