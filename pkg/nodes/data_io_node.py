"""
Data I/O Node - datasets, baseline chains, screening results and run manifests on disk

Formats (all decimal output uses '.17g', which round-trips float64 exactly):
  y file        one decimal per line
  X csv         comma-separated integer codes, one subject per row, optional header;
                empty or NA fields are missing (written as NA); level counts that
                differ from 1 + largest code go to a "<x>.levels" sidecar
  X packed      'MOBX', u16 version, u64 n, u64 p, p level-count bytes, then
                column-major u8 codes (255 = missing), little-endian
  chain file    '# mobs-chain v1 k=.. n=.. draws=..' then one record per draw:
                index;weights;means;variances;allocations (1-based)
  results csv   j,pi0,p11,p12,p13,degenerate (1-based j) plus '# key=value' trailer
"""

import csv
import json
import math
import os
import re
import struct
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from config import Config
from core_model import MAX_LEVELS, MISSING_CODE, Dataset, Hyperparams, MixtureDraw
from nodes.gibbs_sampler_node import ChainConfig, ChainOutput
from nodes.report_generator_node import RocCurve
from nodes.screening_node import ScreeningResult
from utils.errors import (
    FormatError,
    InvalidArgumentError,
    InvalidInputError,
    MobsIOError,
    UnsupportedCardinalityError,
)
from utils.logger import setup_logger

logger = setup_logger()

PACKED_MAGIC = b'MOBX'
PACKED_VERSION = 1
PACKED_HEADER = struct.Struct('<4sHQQ')
CHAIN_VERSION = 1
CHAIN_HEADER = re.compile(r'^# mobs-chain v(\d+) k=(\d+) n=(\d+) draws=(\d+)$')
RESULTS_HEADER = ['j', 'pi0', 'p11', 'p12', 'p13', 'degenerate']
MISSING_TOKENS = {'', 'na', 'nan', '.'}
MISSING_TOKEN = 'NA'
FORMATS = ('csv', 'packed')


def _fmt(value: float) -> str:
    return format(float(value), '.17g')


def _join(values) -> str:
    return ','.join(_fmt(v) for v in values)


def _open(path: str, mode: str):
    try:
        return open(path, mode, newline='' if 'b' not in mode else None, encoding=None if 'b' in mode else 'utf-8')
    except OSError as e:
        raise MobsIOError(e.strerror or str(e), path) from e


def read_response(y_path: str) -> np.ndarray:
    values = []
    with _open(y_path, 'r') as handle:
        for line_no, line in enumerate(handle, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                value = float(text)
            except ValueError:
                raise FormatError(f"cannot parse response value {text!r}", line_no)
            if not math.isfinite(value):
                raise FormatError(f"non-finite response value {text!r}", line_no)
            values.append(value)
    if not values:
        raise InvalidInputError(f"{y_path}: response file is empty")
    return np.asarray(values)


def _parse_code(token: str, line_no: int, column: int) -> int:
    text = token.strip()
    if text.lower() in MISSING_TOKENS:
        return MISSING_CODE
    try:
        code = int(text)
    except ValueError:
        raise FormatError(f"column {column}: cannot parse predictor code {text!r}", line_no)
    if code < 0:
        raise FormatError(f"column {column}: negative predictor code {code}", line_no)
    if code >= MAX_LEVELS:
        raise UnsupportedCardinalityError(
            f"line {line_no}, column {column}: code {code} exceeds the {MAX_LEVELS - 1} supported levels"
        )
    return code


def _is_header(row: Sequence[str]) -> bool:
    for token in row:
        text = token.strip()
        if text.lower() in MISSING_TOKENS:
            continue
        try:
            int(text)
        except ValueError:
            return True
    return False


def read_predictors_csv(x_path: str):
    """(codes, names) from a comma-separated predictor file"""
    rows: List[List[int]] = []
    names: List[str] = []
    width = None
    with _open(x_path, 'r') as handle:
        for line_no, row in enumerate(csv.reader(handle), start=1):
            if not row or all(not token.strip() for token in row):
                continue
            if line_no == 1 and _is_header(row):
                names = [token.strip() for token in row]
                width = len(names)
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FormatError(f"expected {width} fields, found {len(row)}", line_no)
            rows.append([_parse_code(token, line_no, column) for column, token in enumerate(row, start=1)])
    if not rows:
        raise InvalidInputError(f"{x_path}: predictor file has no data rows")
    return np.asfortranarray(np.asarray(rows, dtype=np.uint8)), names


def read_predictors_packed(x_path: str):
    """(codes, levels) from a packed file; codes are memory-mapped, column-major"""
    try:
        size = os.path.getsize(x_path)
        with open(x_path, 'rb') as handle:
            header = handle.read(PACKED_HEADER.size)
            if len(header) < PACKED_HEADER.size:
                raise FormatError(f"{x_path}: truncated packed header")
            magic, version, n, p = PACKED_HEADER.unpack(header)
            if magic != PACKED_MAGIC:
                raise FormatError(f"{x_path}: not a packed predictor file")
            if version != PACKED_VERSION:
                raise FormatError(f"{x_path}: unsupported packed version {version}")
            levels = np.frombuffer(handle.read(p), dtype=np.uint8).astype(np.int64)
    except OSError as e:
        raise MobsIOError(e.strerror or str(e), x_path) from e
    if n == 0 or p == 0:
        raise InvalidInputError(f"{x_path}: packed file holds an empty matrix")
    offset = PACKED_HEADER.size + p
    if levels.size != p or size != offset + n * p:
        raise FormatError(f"{x_path}: expected {offset + n * p} bytes, found {size}")
    codes = np.memmap(x_path, dtype=np.uint8, mode='r', offset=offset, shape=(p, n)).T
    return codes, levels


def read_levels(levels_path: str) -> np.ndarray:
    with _open(levels_path, 'r') as handle:
        tokens = [token for token in re.split(r'[,\s]+', handle.read()) if token]
    try:
        return np.asarray([int(token) for token in tokens], dtype=np.int64)
    except ValueError as e:
        raise FormatError(f"{levels_path}: {e}") from e


def levels_sidecar(x_path: str) -> str:
    """Declared level counts written next to a csv predictor file"""
    return x_path + '.levels'


def infer_levels(codes: np.ndarray) -> np.ndarray:
    """1 + largest observed code per column, at least 2"""
    observed = np.zeros(codes.shape[1], dtype=np.int64)
    for start in range(0, codes.shape[1], 64):
        block = codes[:, start:start + 64]
        observed[start:start + 64] = np.where(block == MISSING_CODE, 0, block).max(axis=0)
    return np.maximum(observed + 1, 2)


def load_dataset(y_path: str, x_path: str, fmt: str = 'csv',
                 levels_path: Optional[str] = None) -> Dataset:
    """Read a response file and a predictor file into a Dataset"""
    if fmt not in FORMATS:
        raise InvalidArgumentError(f"format must be one of {FORMATS}")
    y = read_response(y_path)
    names: List[str] = []
    if fmt == 'csv':
        codes, names = read_predictors_csv(x_path)
        levels = infer_levels(codes)
    else:
        codes, levels = read_predictors_packed(x_path)
    if levels_path is None and fmt == 'csv' and os.path.exists(levels_sidecar(x_path)):
        levels_path = levels_sidecar(x_path)
    if levels_path:
        levels = read_levels(levels_path)
    if codes.shape[0] != y.size:
        raise InvalidInputError(f"{y_path} has {y.size} responses but {x_path} has {codes.shape[0]} rows")
    try:
        dataset = Dataset(y=y, x=codes, levels=levels, names=tuple(names))
    except InvalidArgumentError as e:
        raise InvalidInputError(str(e)) from e

    flagged = dataset.degenerate_mask()
    if np.any(flagged):
        logger.warning(f"{int(flagged.sum())} predictor(s) are constant, have an empty level or missing values")
    logger.info(f"Loaded dataset: n={dataset.n}, p={dataset.p}, max levels={int(dataset.levels.max())}")
    return dataset


def save_dataset(dataset: Dataset, y_path: str, x_path: str, fmt: str = 'csv') -> None:
    """Write a Dataset in the given predictor format (y is always text)"""
    if fmt not in FORMATS:
        raise InvalidArgumentError(f"format must be one of {FORMATS}")
    with _open(y_path, 'w') as handle:
        handle.writelines(f"{_fmt(v)}\n" for v in dataset.y)
    if fmt == 'csv':
        with _open(x_path, 'w') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            if dataset.names:
                writer.writerow(dataset.names)
            for start in range(0, dataset.n, 1024):
                writer.writerows(
                    [MISSING_TOKEN if code == MISSING_CODE else str(code) for code in row]
                    for row in dataset.x[start:start + 1024].tolist()
                )
        sidecar = levels_sidecar(x_path)
        if not np.array_equal(dataset.levels, infer_levels(dataset.x)):
            with _open(sidecar, 'w') as handle:
                handle.write(' '.join(str(int(v)) for v in dataset.levels) + '\n')
        elif os.path.exists(sidecar):
            os.remove(sidecar)
        return
    with _open(x_path, 'wb') as handle:
        handle.write(PACKED_HEADER.pack(PACKED_MAGIC, PACKED_VERSION, dataset.n, dataset.p))
        handle.write(dataset.levels.astype(np.uint8).tobytes())
        for start in range(0, dataset.p, 64):
            handle.write(np.ascontiguousarray(dataset.x[:, start:start + 64].T).tobytes())


def persist_chain(chain: ChainOutput, path: str) -> None:
    """One record per retained draw; allocations written 1-based"""
    with _open(path, 'w') as handle:
        handle.write(f"# mobs-chain v{CHAIN_VERSION} k={chain.k} n={chain.n} draws={chain.n_draws}\n")
        for index, draw in enumerate(chain.draws):
            allocations = ','.join(str(c) for c in (draw.allocations + 1).tolist())
            handle.write(
                f"{index};{_join(draw.weights)};{_join(draw.means)};{_join(draw.variances)};{allocations}\n"
            )


def _parse_floats(group: str, expected: int, what: str, line_no: int) -> np.ndarray:
    try:
        values = np.asarray([float(v) for v in group.split(',')])
    except ValueError:
        raise FormatError(f"cannot parse {what}", line_no)
    if values.size != expected:
        raise FormatError(f"expected {expected} {what}, found {values.size}", line_no)
    return values


def load_chain(path: str) -> ChainOutput:
    """Read a chain file written by persist_chain"""
    draws: List[MixtureDraw] = []
    with _open(path, 'r') as handle:
        header = handle.readline().strip()
        match = CHAIN_HEADER.match(header)
        if not match:
            raise FormatError("missing or malformed chain header", 1)
        version, k, n, expected = (int(v) for v in match.groups())
        if version != CHAIN_VERSION:
            raise FormatError(f"unsupported chain version {version}", 1)

        line_no = 1
        for line_no, line in enumerate(handle, start=2):
            groups = line.rstrip('\n').split(';')
            if len(groups) != 5:
                raise FormatError(f"expected 5 field groups, found {len(groups)}", line_no)
            if groups[0] != str(len(draws)):
                raise FormatError(f"expected draw index {len(draws)}, found {groups[0]!r}", line_no)
            weights = _parse_floats(groups[1], k, 'weights', line_no)
            means = _parse_floats(groups[2], k, 'means', line_no)
            variances = _parse_floats(groups[3], k, 'variances', line_no)
            try:
                allocations = np.asarray([int(c) for c in groups[4].split(',')], dtype=np.int64) - 1
            except ValueError:
                raise FormatError("cannot parse allocations", line_no)
            if allocations.size != n:
                raise FormatError(f"expected {n} allocations, found {allocations.size}", line_no)
            try:
                draws.append(MixtureDraw(weights, means, variances, allocations))
            except InvalidArgumentError as e:
                raise FormatError(str(e), line_no) from e

    if len(draws) != expected:
        raise FormatError(f"header declares {expected} draws but the file ends after {len(draws)}", line_no + 1)
    return ChainOutput(draws=tuple(draws), diagnostics=np.empty(0))


def write_results(result: ScreeningResult, path: str, seed: Optional[int] = None) -> None:
    """Per-predictor probabilities with a metadata trailer"""
    with _open(path, 'w') as handle:
        handle.write(','.join(RESULTS_HEADER) + '\n')
        for j in range(result.n_predictors):
            handle.write(f"{j + 1},{_join(result.probs[j])},{int(result.degenerate[j])}\n")
        handle.write(f"# kappa={_join(result.kappa)}\n")
        handle.write(f"# iterations={result.iterations}\n")
        handle.write(f"# converged={int(result.converged)}\n")
        seed = result.seed if seed is None else seed
        if seed is not None:
            handle.write(f"# seed={seed}\n")


def read_results(path: str) -> ScreeningResult:
    """Parse a results file back into a ScreeningResult"""
    rows, meta = [], {}
    with _open(path, 'r') as handle:
        header = handle.readline().strip()
        if header.split(',') != RESULTS_HEADER:
            raise FormatError("unexpected results header", 1)
        for line_no, line in enumerate(handle, start=2):
            text = line.strip()
            if not text:
                continue
            if text.startswith('#'):
                key, _, value = text[1:].strip().partition('=')
                meta[key] = value
                continue
            fields = text.split(',')
            if len(fields) != 6 or fields[0] != str(len(rows) + 1):
                raise FormatError("malformed results row", line_no)
            try:
                rows.append([float(v) for v in fields[1:5]] + [int(fields[5])])
            except ValueError:
                raise FormatError("malformed results row", line_no)
    if not rows or 'kappa' not in meta:
        raise FormatError(f"{path}: results file has no rows or no kappa trailer")
    table = np.asarray(rows)
    if not meta.get('seed', '0').isdigit():
        raise FormatError(f"{path}: malformed seed trailer {meta['seed']!r}")
    return ScreeningResult(
        probs=table[:, :4],
        kappa=tuple(float(v) for v in meta['kappa'].split(',')),
        iterations=int(meta.get('iterations', 0)),
        converged=meta.get('converged', '0') == '1',
        degenerate=table[:, 4].astype(bool),
        seed=int(meta['seed']) if 'seed' in meta else None,
    )


def write_roc(curve: RocCurve, path: str) -> None:
    with _open(path, 'w') as handle:
        handle.write('threshold,fpr,tpr\n')
        for threshold, fpr, tpr in zip(curve.thresholds, curve.fpr, curve.tpr):
            handle.write(f"{_fmt(threshold)},{_fmt(fpr)},{_fmt(tpr)}\n")


def write_truth(truth: Sequence[int], path: str) -> None:
    with _open(path, 'w') as handle:
        handle.writelines(f"{int(j) + 1}\n" for j in truth)


def load_truth(path: str) -> np.ndarray:
    """0-based indices from a file of 1-based indices, one per line"""
    with _open(path, 'r') as handle:
        tokens = [line.strip() for line in handle if line.strip()]
    try:
        return np.asarray([int(token) - 1 for token in tokens], dtype=np.int64)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


def write_selection(rows: Sequence[Dict], path: str) -> None:
    with _open(path, 'w') as handle:
        handle.write('rank,j,pi0,p11,p12,p13,dominant\n')
        for rank, row in enumerate(rows, start=1):
            handle.write(
                f"{rank},{row['j'] + 1},{_fmt(row['pi0'])},{_fmt(row['p11'])},"
                f"{_fmt(row['p12'])},{_fmt(row['p13'])},{row['dominant']}\n"
            )


@dataclass
class RunManifest:
    """Everything a screening run was configured with"""

    y_path: str
    x_path: str
    output_dir: str
    hyperparams: Hyperparams
    chain: ChainConfig
    x_format: str = 'csv'
    levels_path: Optional[str] = None
    chain_path: Optional[str] = None
    tol: float = 1e-8
    max_iter: int = 200
    threads: int = 1
    chunk_size: int = 256
    mem_budget: int = field(default_factory=lambda: Config.SCREENING_CONFIG['mem_budget'])
    top: int = 50
    n_chains: int = 1
    seed: int = 2024

    def validate(self) -> 'RunManifest':
        for name in ('y_path', 'x_path', 'levels_path', 'chain_path'):
            path = getattr(self, name)
            if path and not os.path.exists(path):
                raise MobsIOError("file not found", path)
        if self.threads < 1:
            raise InvalidArgumentError(f"worker count must be >= 1 (got {self.threads})")
        if self.chunk_size < 1 or self.top < 1 or self.n_chains < 1:
            raise InvalidArgumentError("chunk size, top and chain count must be >= 1")
        if self.x_format not in FORMATS:
            raise InvalidArgumentError(f"format must be one of {FORMATS}")
        return self

    def to_dict(self) -> Dict:
        return asdict(self)

    def write(self, path: Optional[str] = None) -> str:
        path = path or os.path.join(self.output_dir, 'manifest.json')
        with _open(path, 'w') as handle:
            json.dump(self.to_dict(), handle, indent=2, sort_keys=True)
            handle.write('\n')
        return path
