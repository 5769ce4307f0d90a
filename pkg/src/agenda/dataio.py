"""Binary descriptor datasets and the small file formats shared by every stage.

Dataset file layout (all little-endian):

    magic   4 bytes  b"FDS1"
    version u32      currently 1
    count   u64      number of records
    dim     u32      vector length
    records count x (identity u64, attribute u8, vector dim x f32)

Vectors are stored as float32 and widened to float64 in memory; training
math runs in 64-bit while files stay half-size. Every producer in the
package writes this one format, so stages compose on the CLI regardless of
where a dataset came from.
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, DimensionError, ValidationError

MAGIC = b"FDS1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQI")

# Readers refuse to allocate more than this for a single payload unless told
# otherwise; malformed headers fail fast instead of exhausting memory.
DEFAULT_MAX_BYTES = 8 << 30


@dataclass
class DescriptorDataset:
    """Embedding vectors with an identity id and a binary attribute per row.

    Attribute coding is 0 = female, 1 = male throughout the package.
    """

    identities: np.ndarray  # (n,) uint64
    attributes: np.ndarray  # (n,) uint8, values in {0, 1}
    vectors: np.ndarray  # (n, dim) float64

    def __post_init__(self):
        self.identities = np.ascontiguousarray(self.identities, dtype=np.uint64)
        self.attributes = np.ascontiguousarray(self.attributes, dtype=np.uint8)
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise DimensionError("vectors must be 2-d (records x dim)")
        n = self.vectors.shape[0]
        if self.identities.shape != (n,) or self.attributes.shape != (n,):
            raise DimensionError("identities/attributes length must match vectors")
        if np.any(self.attributes > 1):
            raise ValidationError("attribute labels must be 0 or 1")
        if not np.all(np.isfinite(self.vectors)):
            raise ValidationError("descriptor vectors must be finite")

    @property
    def n(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]

    def subset(self, indices):
        indices = np.asarray(indices)
        if indices.size == 0:
            indices = np.empty(0, dtype=np.int64)
        return DescriptorDataset(
            self.identities[indices].copy(),
            self.attributes[indices].copy(),
            self.vectors[indices].copy(),
        )


def _record_dtype(dim):
    return np.dtype(
        [("identity", "<u8"), ("attribute", "u1"), ("vector", "<f4", (dim,))]
    )


def write_dataset(dataset, path):
    """Write ``dataset`` to ``path``; vectors are narrowed to float32."""
    vec32 = dataset.vectors.astype(np.float32)
    if not np.all(np.isfinite(vec32)):
        raise ValidationError("vectors overflow float32 storage")
    records = np.empty(dataset.n, dtype=_record_dtype(dataset.dim))
    records["identity"] = dataset.identities
    records["attribute"] = dataset.attributes
    records["vector"] = vec32
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, dataset.n, dataset.dim))
        fh.write(records.tobytes())


def read_dataset(path, max_bytes=DEFAULT_MAX_BYTES):
    """Read a dataset file, validating the header before touching the payload."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise DataFormatError(
                "truncated",
                "file too short for header: expected %d bytes, got %d"
                % (_HEADER.size, len(head)),
            )
        magic, version, count, dim = _HEADER.unpack(head)
        if magic != MAGIC:
            raise DataFormatError("bad_magic", "bad magic %r (expected %r)" % (magic, MAGIC))
        if version != FORMAT_VERSION:
            raise DataFormatError(
                "version", "unsupported format version %d (expected %d)" % (version, FORMAT_VERSION)
            )
        if dim < 1:
            raise DataFormatError("truncated", "header declares dim=0")
        expected = count * _record_dtype(dim).itemsize
        if expected > max_bytes:
            raise DataFormatError(
                "too_large",
                "payload of %d bytes exceeds the %d byte cap" % (expected, max_bytes),
            )
        payload = fh.read(expected + 1)
    if len(payload) != expected:
        raise DataFormatError(
            "truncated",
            "payload length mismatch: expected %d bytes, got %s"
            % (expected, "more" if len(payload) > expected else len(payload)),
        )
    records = np.frombuffer(payload, dtype=_record_dtype(dim), count=count)
    if np.any(records["attribute"] > 1):
        raise DataFormatError("bad_attribute", "attribute byte outside {0, 1}")
    vectors = records["vector"].astype(np.float64)
    if not np.all(np.isfinite(vectors)):
        raise DataFormatError("nonfinite", "dataset contains non-finite vector entries")
    return DescriptorDataset(
        records["identity"].astype(np.uint64),
        records["attribute"].astype(np.uint8),
        vectors,
    )


def split_by_identity(dataset, heldout_fraction, seed):
    """Split record indices into (main, heldout) with disjoint identities.

    Identities are shuffled by ``seed`` and moved to the heldout side until
    it holds at least ``heldout_fraction`` of the records. Record order is
    preserved within each side.
    """
    if not 0.0 < heldout_fraction < 1.0:
        raise ValidationError("heldout_fraction must be in (0, 1)")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.Generator(np.random.Philox(ss))
    ids = np.unique(dataset.identities)
    if len(ids) < 2:
        raise ValidationError("need at least 2 identities to split")
    order = rng.permutation(len(ids))
    target = heldout_fraction * dataset.n
    counts = {i: c for i, c in zip(*np.unique(dataset.identities, return_counts=True))}
    heldout_ids = []
    total = 0
    for pos in order:
        if total >= target:
            break
        heldout_ids.append(ids[pos])
        total += counts[ids[pos]]
    if len(heldout_ids) == len(ids):
        raise ValidationError("heldout fraction leaves no identities for the main split")
    mask = np.isin(dataset.identities, np.asarray(heldout_ids, dtype=np.uint64))
    return np.flatnonzero(~mask), np.flatnonzero(mask)


def read_kv_config(path):
    """Parse a ``key=value`` text file; '#' starts a comment, blanks ignored."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataFormatError(
                    "bad_key", "%s:%d: expected key=value, got %r" % (path, lineno, raw.strip())
                )
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def coerce_kv(values, fields):
    """Coerce string config values to the types in ``fields`` (name -> type).

    Unknown keys raise so typos in config files fail loudly.
    """
    out = {}
    for key, raw in values.items():
        if key not in fields:
            raise ValidationError(
                "unknown config key %r (known: %s)" % (key, ", ".join(sorted(fields)))
            )
        typ = fields[key]
        try:
            if typ is bool:
                out[key] = raw.lower() in ("1", "true", "yes", "on")
            else:
                out[key] = typ(raw)
        except ValueError as exc:
            raise ValidationError("config key %r: %s" % (key, exc)) from exc
    return out


def format_float(x):
    """Shortest round-trip decimal form; keeps report files byte-stable."""
    if x is None:
        return ""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return repr(float(x))


def write_csv_report(path, comments, header, rows):
    """Write a CSV report with '#' comment lines carrying run provenance."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in comments:
            fh.write("# %s\n" % line)
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")
