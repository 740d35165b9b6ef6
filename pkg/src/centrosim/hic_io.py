"""Contact-map persistence (one TSV per block + JSON sidecar) and ICE
balancing of the genome-wide trans matrix."""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from .genome import ContactMap, GenomeSpec, spec_from_dict, spec_to_dict
from .simulator import DEFAULT_NOISE_FRAC, SimParams, sample_sim_params, simulate_map
from .rng import make_rng

SIDECAR = "map.json"


@dataclasses.dataclass
class LoadedMap:
    spec: GenomeSpec
    cmap: ContactMap
    meta: dict


def _block_filename(spec: GenomeSpec, i: int, j: int) -> str:
    return f"block__{spec.names[i]}__{spec.names[j]}.tsv"


def save_map(
    dirpath,
    spec: GenomeSpec,
    cmap: ContactMap,
    theta_ref=None,
    seed: int | None = None,
    normalized: bool = False,
    extra: dict | None = None,
) -> None:
    """Write one TSV per trans block plus a `map.json` sidecar.

    Values are written with %.17g so float64 content round-trips exactly;
    nothing time- or host-dependent goes into the sidecar.
    """
    os.makedirs(dirpath, exist_ok=True)
    entries = []
    for (i, j), block in sorted(cmap.blocks.items()):
        assert block.shape == spec.block_shape(i, j)
        fname = _block_filename(spec, i, j)
        np.savetxt(os.path.join(dirpath, fname), block, fmt="%.17g", delimiter="\t")
        entries.append({"i": i, "j": j, "file": fname,
                        "rows": block.shape[0], "cols": block.shape[1]})
    meta = {
        "format_version": 1,
        "genome": spec_to_dict(spec),
        "genome_digest": spec.digest(),
        "blocks": entries,
        "theta_ref": None if theta_ref is None else [float(t) for t in np.asarray(theta_ref)],
        "seed": seed,
        "normalized": bool(normalized),
    }
    if extra:
        meta.update(extra)
    with open(os.path.join(dirpath, SIDECAR), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_map(dirpath) -> LoadedMap:
    with open(os.path.join(dirpath, SIDECAR)) as fh:
        meta = json.load(fh)
    spec = spec_from_dict(meta["genome"])
    blocks = {}
    for e in meta["blocks"]:
        arr = np.loadtxt(os.path.join(dirpath, e["file"]), delimiter="\t", ndmin=2)
        assert arr.shape == (e["rows"], e["cols"]), f"{e['file']}: shape mismatch"
        blocks[(e["i"], e["j"])] = arr
    return LoadedMap(spec=spec, cmap=ContactMap(n_chrom=spec.n_chrom, blocks=blocks), meta=meta)


def ice_normalize(
    matrix: np.ndarray,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Iterative correction of a symmetric non-negative matrix.

    Repeats M <- M / sqrt(outer(s, s)) with s the row sums until every
    initially non-zero row sums to 1 within tol. Zero rows are left untouched
    and reported. Returns (balanced matrix, accumulated bias vector, info);
    the input factorizes as approximately outer(bias, bias) * balanced.
    """
    m = np.array(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    scale = max(float(np.abs(m).max()), 1.0)
    if float(np.abs(m - m.T).max()) > 1e-9 * scale:
        raise ValueError("input matrix is not symmetric within 1e-9")
    if m.min() < 0:
        raise ValueError("input matrix has negative entries")

    nonzero = m.sum(axis=1) > 0
    bias = np.ones(m.shape[0], dtype=np.float64)
    n_iter = 0

    def residual() -> float:
        s = m.sum(axis=1)
        return float(np.abs(s[nonzero] - 1.0).max()) if nonzero.any() else 0.0

    while residual() >= tol and n_iter < max_iter:
        s = m.sum(axis=1)
        root = np.sqrt(np.where(nonzero, s, 1.0))
        m /= np.outer(root, root)
        bias *= root
        n_iter += 1
    info = {
        "n_iter": n_iter,
        "converged": residual() < tol,
        "zero_bins": int((~nonzero).sum()),
        "max_residual": residual(),
    }
    return m, bias, info


def normalize_map(
    spec: GenomeSpec,
    cmap: ContactMap,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> tuple[ContactMap, np.ndarray, dict]:
    """ICE-balance the full trans assembly and slice the blocks back out."""
    full = cmap.full_matrix(spec)
    balanced, bias, info = ice_normalize(full, tol=tol, max_iter=max_iter)
    off = spec.bin_offsets()
    blocks = {
        (i, j): balanced[off[i]:off[i + 1], off[j]:off[j + 1]].copy()
        for (i, j) in cmap.blocks
    }
    return ContactMap(n_chrom=spec.n_chrom, blocks=blocks), bias, info


def make_reference(
    spec: GenomeSpec,
    theta_ref,
    seed: int,
    mode: str = "raw",
    params: SimParams | None = None,
    noise: bool = True,
    noise_frac: float = DEFAULT_NOISE_FRAC,
) -> tuple[ContactMap, dict]:
    """Simulate the reference map for theta_ref; optionally ICE-balance it."""
    assert mode in ("raw", "normalized")
    rng = make_rng(seed)
    if params is None:
        # pre-drawing here consumes the same two variates simulate_map would,
        # so the map is unchanged when noise_frac is left at the default
        params = sample_sim_params(rng, noise_frac)
    cmap = simulate_map(spec, theta_ref, rng, params=params, noise=noise)
    meta = {"mode": mode, "seed": seed,
            "theta_ref": [float(t) for t in np.asarray(theta_ref)]}
    if mode == "normalized":
        cmap, _, info = normalize_map(spec, cmap)
        meta["ice"] = info
    return cmap, meta
