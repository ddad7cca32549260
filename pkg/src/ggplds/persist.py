"""Posterior document storage.

A document is a human-inspectable JSON header at the given path plus a raw
binary side file (`<path>.bin`) holding the arrays. The header records the
model dimensions, hyperparameters, and an index mapping each array key
(chain/sample/symbol) to its dtype, shape, and byte range in the payload.
Writing is byte-deterministic: fixed key order, sorted JSON keys, and
shortest-round-trip float encoding, so identical runs produce identical
files.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import SchemaError
from .state import (
    GAUSSIAN,
    NEGATIVE_BINOMIAL,
    GgpState,
    Hyperparameters,
    LatentTrajectory,
    ObservationState,
    PosteriorSample,
    TransitionState,
)

SCHEMA_VERSION = 1

_COMMON_KEYS = [
    "r", "theta", "psi", "rho", "tau", "e", "f",
    "W", "Z", "M", "m_split", "varphi", "lambda",
    "D", "X", "x0",
]
_GAUSSIAN_KEYS = ["Phi"]
_NB_KEYS = ["eta", "alpha_eta", "beta_eta", "omega"]

_INT64 = "<i8"
_INT8 = "<i1"
_F64 = "<f8"


def _expected_layout(K, S, V, T, kind):
    layout = {
        "r": (_F64, (K,)),
        "theta": (_F64, (S, K)),
        "psi": (_F64, (S, K)),
        "rho": (_F64, (S,)),
        "tau": (_F64, (S,)),
        "e": (_F64, (K,)),
        "f": (_F64, (K,)),
        "W": (_F64, (S, S)),
        "Z": (_INT8, (S, S)),
        "M": (_INT64, (S, S)),
        "m_split": (_INT64, (S, S, K)),
        "varphi": (_F64, (S, S)),
        "lambda": (_F64, (S,)),
        "D": (_F64, (V, S)),
        "X": (_F64, (S, T)),
        "x0": (_F64, (S,)),
    }
    if kind == GAUSSIAN:
        layout["Phi"] = (_F64, (V, V))
    else:
        layout["eta"] = (_F64, ())
        layout["alpha_eta"] = (_F64, ())
        layout["beta_eta"] = (_F64, ())
        layout["omega"] = (_F64, (V, T))
    return layout


def _array_keys(kind):
    return _COMMON_KEYS + (_GAUSSIAN_KEYS if kind == GAUSSIAN else _NB_KEYS)


def _sample_arrays(sample: PosteriorSample, kind):
    g, t, o, tr = sample.ggp, sample.trans, sample.obs, sample.traj
    arrays = {
        "r": g.r, "theta": g.theta, "psi": g.psi, "rho": g.rho, "tau": g.tau,
        "e": g.e, "f": g.f,
        "W": t.W, "Z": t.Z, "M": t.M, "m_split": t.m_split,
        "varphi": t.varphi, "lambda": t.lam,
        "D": o.D, "X": tr.X, "x0": tr.x0,
    }
    if kind == GAUSSIAN:
        arrays["Phi"] = o.gaussian_precision
    else:
        arrays["eta"] = np.float64(o.nb_dispersion)
        arrays["alpha_eta"] = np.float64(o.alpha_eta)
        arrays["beta_eta"] = np.float64(o.beta_eta)
        arrays["omega"] = o.pg_aux
    return arrays


@dataclass
class PosteriorDocument:
    hyper: Hyperparameters
    T: int
    chains: list  # list of list[PosteriorSample]
    header: dict

    @property
    def kind(self):
        return self.hyper.observation_kind

    def pooled_samples(self, chain=None):
        if chain is not None:
            if chain < 0 or chain >= len(self.chains):
                raise SchemaError(f"chain index {chain} out of range (have {len(self.chains)})")
            return list(self.chains[chain])
        out = []
        for ch in self.chains:
            out.extend(ch)
        return out


def save_posterior(path, hyper: Hyperparameters, T: int, chains) -> None:
    """Write a posterior document holding one or more chains of samples."""
    kind = hyper.observation_kind
    layout = _expected_layout(hyper.K, hyper.S, hyper.V, T, kind)
    keys = _array_keys(kind)

    payload = bytearray()
    chain_entries = []
    for chain_id, samples in enumerate(chains):
        sample_entries = []
        for s_idx, sample in enumerate(samples):
            arrays = _sample_arrays(sample, kind)
            index = {}
            for key in keys:
                dtype, shape = layout[key]
                arr = np.asarray(arrays[key]).astype(np.dtype(dtype), copy=False)
                if arr.shape != shape:
                    raise SchemaError(
                        f"array {key} of chain {chain_id} sample {s_idx} has shape "
                        f"{arr.shape}, expected {shape}"
                    )
                raw = arr.tobytes()
                index[key] = {
                    "dtype": dtype,
                    "shape": list(shape),
                    "offset": len(payload),
                    "nbytes": len(raw),
                }
                payload.extend(raw)
            sample_entries.append({"iteration": int(sample.iteration), "arrays": index})
        chain_entries.append({"chain_id": chain_id, "samples": sample_entries})

    header = {
        "schema_version": SCHEMA_VERSION,
        "K": hyper.K,
        "S": hyper.S,
        "V": hyper.V,
        "T": int(T),
        "observation_kind": kind,
        "hyperparameters": hyper.scalar_dict(),
        "wishart_scale": hyper.wishart_scale.tolist(),
        "m0": hyper.m0.tolist(),
        "H0": hyper.H0.tolist(),
        "seed": hyper.seed,
        "payload": os.path.basename(path) + ".bin",
        "chains": chain_entries,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    with open(path + ".bin", "wb") as fh:
        fh.write(bytes(payload))


def load_posterior(path) -> PosteriorDocument:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            header = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed posterior header: {exc}") from exc

    version = header.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"schema_version {version} unsupported (expected {SCHEMA_VERSION})")
    for field_name in ("K", "S", "V", "T", "observation_kind", "hyperparameters", "chains"):
        if field_name not in header:
            raise SchemaError(f"posterior header missing field {field_name!r}")

    K, S, V, T = header["K"], header["S"], header["V"], header["T"]
    kind = header["observation_kind"]
    layout = _expected_layout(K, S, V, T, kind)
    keys = _array_keys(kind)

    hp = dict(header["hyperparameters"])
    hp.update(
        wishart_scale=np.array(header["wishart_scale"], dtype=float),
        m0=np.array(header["m0"], dtype=float),
        H0=np.array(header["H0"], dtype=float),
    )
    hyper = Hyperparameters(**hp)
    if (hyper.K, hyper.S, hyper.V) != (K, S, V):
        raise SchemaError("header dimensions disagree with hyperparameters")

    payload_path = os.path.join(os.path.dirname(path) or ".", header["payload"])
    if not os.path.exists(payload_path):
        raise SchemaError(f"payload file {header['payload']!r} not found beside header")
    with open(payload_path, "rb") as fh:
        payload = fh.read()

    chains = []
    for c_idx, chain in enumerate(header["chains"]):
        samples = []
        for s_idx, entry in enumerate(chain["samples"]):
            where = f"chains[{c_idx}].samples[{s_idx}]"
            index = entry.get("arrays", {})
            arrays = {}
            for key in keys:
                if key not in index:
                    raise SchemaError(f"{where}.arrays.{key} missing from document")
                meta = index[key]
                dtype_expected, shape_expected = layout[key]
                if meta["dtype"] != dtype_expected:
                    raise SchemaError(f"{where}.arrays.{key} has dtype {meta['dtype']}")
                if tuple(meta["shape"]) != shape_expected:
                    raise SchemaError(
                        f"{where}.arrays.{key} has shape {tuple(meta['shape'])}, "
                        f"expected {shape_expected} from header dimensions"
                    )
                start, nbytes = meta["offset"], meta["nbytes"]
                if start + nbytes > len(payload):
                    raise SchemaError(f"{where}.arrays.{key} extends past payload end")
                arr = np.frombuffer(
                    payload[start : start + nbytes], dtype=np.dtype(dtype_expected)
                ).reshape(shape_expected).copy()
                arr.setflags(write=False)
                arrays[key] = arr
            samples.append(_sample_from_arrays(arrays, kind, int(entry["iteration"])))
        chains.append(samples)

    return PosteriorDocument(hyper=hyper, T=T, chains=chains, header=header)


def _sample_from_arrays(a, kind, iteration):
    ggp = GgpState(r=a["r"], theta=a["theta"], psi=a["psi"], rho=a["rho"],
                   tau=a["tau"], e=a["e"], f=a["f"])
    trans = TransitionState(W=a["W"], Z=a["Z"], M=a["M"], m_split=a["m_split"],
                            varphi=a["varphi"], lam=a["lambda"])
    if kind == GAUSSIAN:
        obs = ObservationState(D=a["D"], gaussian_precision=a["Phi"])
    else:
        obs = ObservationState(
            D=a["D"],
            nb_dispersion=float(a["eta"]),
            alpha_eta=float(a["alpha_eta"]),
            beta_eta=float(a["beta_eta"]),
            pg_aux=a["omega"],
        )
    traj = LatentTrajectory(X=a["X"], x0=a["x0"])
    return PosteriorSample(ggp=ggp, trans=trans, obs=obs, traj=traj, iteration=iteration)


def serialize_sample(path, hyper: Hyperparameters, sample: PosteriorSample) -> None:
    """Single-sample convenience wrapper over the document format."""
    save_posterior(path, hyper, sample.traj.X.shape[1], [[sample]])


def deserialize_sample(path) -> PosteriorSample:
    doc = load_posterior(path)
    return doc.chains[0][0]
