from pathlib import Path
from typing import Iterable, Sequence, Union
import csv
import hashlib
import json

import numpy as np
import torch
from torch import Tensor

from .hilbert import DTYPE, DensityMatrix, ProcessMatrix, as_matrix


SCHEMA_VERSION = 1


class ArtifactError(ValueError):
    pass


def derive_seed(seed: int, *indices: int) -> int:
    '''Independent 63-bit seed for (seed, index...) regardless of evaluation order.'''
    entropy = [int(seed)] + [int(i) for i in indices]
    hi, lo = (int(x) for x in np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32))
    return ((hi << 32) | lo) & ((1 << 63) - 1)


def make_generator(seed: int, *indices: int) -> torch.Generator:
    return torch.Generator().manual_seed(derive_seed(seed, *indices))


def format_value(value) -> str:
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence]):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def read_csv_columns(path: Union[str, Path], columns: Sequence[str]) -> list[dict[str, float]]:
    '''Reads a headered numeric CSV; every requested column must be present.'''
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"CSV file '{path}' does not exist.")
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise ArtifactError(f"CSV file '{path}' is empty; a header row is required.")
        missing = [c for c in columns if c not in reader.fieldnames]
        if len(missing) > 0:
            raise ArtifactError(f"CSV file '{path}' is missing column(s) {missing}; header is {reader.fieldnames}.")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            try:
                rows.append({c: float(row[c]) for c in columns})
            except (TypeError, ValueError):
                raise ArtifactError(f"{path}:{line_no}: non-numeric value in columns {list(columns)}: {row}")
    return rows


def write_json(path: Union[str, Path], payload: dict):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path: Union[str, Path]) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def matrix_to_json(matrix: Union[Tensor, DensityMatrix, ProcessMatrix], labels: list[str]=None) -> dict:
    mat = as_matrix(matrix)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "re": mat.real.tolist(),
        "im": mat.imag.tolist(),
    }
    if labels is not None:
        payload["sites"] = list(labels)
    return payload


def matrix_from_json(payload: dict) -> Tensor:
    if payload.get("schema_version", None) != SCHEMA_VERSION:
        raise ArtifactError(f"Matrix JSON has schema_version {payload.get('schema_version')!r}, expected {SCHEMA_VERSION}.")
    return torch.complex(torch.tensor(payload["re"], dtype=torch.float64), torch.tensor(payload["im"], dtype=torch.float64))


def dump_states(path: Union[str, Path], states: Iterable[Union[Tensor, DensityMatrix]]):
    '''
    Binary state dump. Each record is a little-endian uint64 dimension followed by the dim x dim matrix
    in row-major order as interleaved (re, im) little-endian float64 pairs. Records are concatenated.
    '''
    with open(path, "wb") as f:
        for state in states:
            mat = as_matrix(state).to(DTYPE).numpy()
            f.write(np.array([mat.shape[0]], dtype="<u8").tobytes())
            f.write(np.ascontiguousarray(mat, dtype="<c16").tobytes())


def load_states(path: Union[str, Path]) -> list[Tensor]:
    data = Path(path).read_bytes()
    states = []
    offset = 0
    while offset < len(data):
        dim = int(np.frombuffer(data, dtype="<u8", count=1, offset=offset)[0])
        offset += 8
        count = dim * dim
        mat = np.frombuffer(data, dtype="<c16", count=count, offset=offset).reshape(dim, dim)
        offset += 16 * count
        states.append(torch.from_numpy(mat.copy()))
    return states


def sha256_file(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_json(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()
