"""Feature extractors: interchange backbone files plus two deterministic stubs."""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from scoutcv.dataset import NUM_CLASSES, DatasetManifest, PlayerRecord
from scoutcv.errors import ScoutError
from scoutcv.features import onnx_model
from scoutcv.features.preprocess import PreprocessSpec, load_pixels, preprocess_image, resolve_preprocess

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExtractorDescriptor:
    """Identity card for an extractor.

    Two extractors with equal descriptors produce equal vectors for equal
    inputs; the identity string alone is stored in feature caches and is
    prefixed with the kind so it can be recovered.
    """

    kind: str  # backbone-file | stub-hash | stub-centroid
    dim: int
    identity: str

    @staticmethod
    def from_identity(identity: str, dim: int) -> "ExtractorDescriptor":
        for kind in ("stub-hash", "stub-centroid"):
            if identity.startswith(kind):
                return ExtractorDescriptor(kind=kind, dim=dim, identity=identity)
        return ExtractorDescriptor(kind="backbone-file", dim=dim, identity=identity)


def _id_entropy(record_id: str) -> int:
    # Platform-stable 64-bit stream key for a record id.
    return int.from_bytes(hashlib.sha256(record_id.encode("utf-8")).digest()[:8], "little")


class HashStubExtractor:
    """Pure function of the input bytes; carries no signal about labels.

    Entry j of the vector is derived from sha256(sha256(data) || j) mapped
    to [-1, 1). Records without a readable image file fall back to hashing
    their id, so purely synthetic manifests still extract.
    """

    def __init__(self, dim: int = 64) -> None:
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.descriptor = ExtractorDescriptor(
            kind="stub-hash", dim=dim, identity=f"stub-hash:dim={dim}"
        )

    def extract_bytes(self, data: bytes) -> np.ndarray:
        digest = hashlib.sha256(data).digest()
        out = np.empty(self.dim, dtype=np.float32)
        for j in range(self.dim):
            h = hashlib.sha256(digest + struct.pack("<I", j)).digest()
            u = int.from_bytes(h[:8], "little")
            out[j] = (u / 2**64) * 2.0 - 1.0
        return out

    def extract_record(self, record: PlayerRecord, images_root: Path | None = None) -> np.ndarray:
        data = _record_bytes(record, images_root)
        return self.extract_bytes(data)


class CentroidStubExtractor:
    """Class-conditioned Gaussian features for end-to-end learning tests.

    Class c gets the centroid ``separation * e_c`` in the first five axes;
    each record adds isotropic noise drawn from a stream keyed by
    (seed, record id), so extraction is deterministic per record.
    """

    def __init__(
        self,
        dim: int = 64,
        sigma: float = 1.0,
        separation: float = 6.0,
        seed: int = 0,
    ) -> None:
        if dim < NUM_CLASSES:
            raise ValueError(f"dim must be >= {NUM_CLASSES}")
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.dim = dim
        self.sigma = sigma
        self.separation = separation
        self.seed = seed
        self.centroids = np.zeros((NUM_CLASSES, dim), dtype=np.float64)
        for c in range(NUM_CLASSES):
            self.centroids[c, c] = separation
        self.descriptor = ExtractorDescriptor(
            kind="stub-centroid",
            dim=dim,
            identity=f"stub-centroid:dim={dim}:sigma={sigma}:sep={separation}:seed={seed}",
        )

    def extract_record(self, record: PlayerRecord, images_root: Path | None = None) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, _id_entropy(record.id)]))
        vec = self.centroids[record.label.value] + self.sigma * rng.standard_normal(self.dim)
        return vec.astype(np.float32)


class OnnxBackboneExtractor:
    """Frozen backbone loaded from an interchange model file.

    The descriptor identity is the sha256 digest of the file, so caches
    built with a different file are detectably stale.
    """

    def __init__(self, path: str | Path, preprocess: PreprocessSpec | str | None = None) -> None:
        self.path = Path(path)
        data = self.path.read_bytes()
        self.model = onnx_model.load_model(data)
        self.spec = resolve_preprocess(preprocess)
        declared = [d for d in self.model.input_shape if d > 0][-2:]
        if len(declared) == 2:
            want_h, want_w = declared
            if preprocess is None:
                # no preset named: keep the default channel stats but match
                # the geometry the model declares
                self.spec = replace(self.spec, target_height=want_h, target_width=want_w)
            elif (self.spec.target_height, self.spec.target_width) != (want_h, want_w):
                raise ScoutError(
                    f"preprocess target {self.spec.target_height}x{self.spec.target_width} "
                    f"does not match the model input {want_h}x{want_w}"
                )
        self.dim = self.model.feature_dim
        digest = hashlib.sha256(data).hexdigest()
        self.descriptor = ExtractorDescriptor(
            kind="backbone-file", dim=self.dim, identity=f"sha256:{digest}"
        )

    def extract_tensor(self, image_chw: np.ndarray) -> np.ndarray:
        vec = onnx_model.run_model(self.model, image_chw)
        if vec.shape[0] != self.dim:
            raise ScoutError(
                f"backbone emitted {vec.shape[0]} values, descriptor declares {self.dim}"
            )
        return vec

    def extract_record(self, record: PlayerRecord, images_root: Path | None = None) -> np.ndarray:
        if record.image_ref is None:
            raise ScoutError(f"record {record.id!r} has no image_ref for backbone extraction")
        path = Path(record.image_ref)
        if images_root is not None and not path.is_absolute():
            path = images_root / path
        pixels = load_pixels(path)
        tensor = preprocess_image(pixels, self.spec)
        return self.extract_tensor(tensor.transpose(2, 0, 1))


Extractor = HashStubExtractor | CentroidStubExtractor | OnnxBackboneExtractor


def _record_bytes(record: PlayerRecord, images_root: Path | None) -> bytes:
    if record.image_ref:
        path = Path(record.image_ref)
        if images_root is not None and not path.is_absolute():
            path = images_root / path
        if path.exists():
            return path.read_bytes()
    return record.id.encode("utf-8")


def make_extractor(
    stub: str | None = None,
    backbone: str | Path | None = None,
    dim: int = 64,
    sigma: float = 1.0,
    separation: float = 6.0,
    seed: int = 0,
    preprocess: PreprocessSpec | str | None = None,
) -> Extractor:
    """Build the extractor selected by CLI-style flags."""
    if (stub is None) == (backbone is None):
        raise ValueError("select exactly one of stub / backbone")
    if backbone is not None:
        return OnnxBackboneExtractor(backbone, preprocess)
    if stub == "hash":
        return HashStubExtractor(dim=dim)
    if stub == "centroid":
        return CentroidStubExtractor(dim=dim, sigma=sigma, separation=separation, seed=seed)
    raise ValueError(f"unknown stub {stub!r}; expected 'hash' or 'centroid'")


def extract_manifest(
    manifest: DatasetManifest,
    extractor: Extractor,
    images_root: Path | None = None,
    skip_unreadable: bool = False,
) -> list[tuple[str, np.ndarray]]:
    """Extract one vector per record, in manifest order.

    With ``skip_unreadable`` set, records whose inputs cannot be read are
    logged and dropped instead of aborting the run.
    """
    out: list[tuple[str, np.ndarray]] = []
    for record in manifest.records:
        try:
            vec = extractor.extract_record(record, images_root)
        except (ScoutError, ValueError, OSError) as exc:
            if skip_unreadable:
                logger.warning("skipping record %s: %s", record.id, exc)
                continue
            raise ScoutError(f"extraction failed for record {record.id!r}: {exc}") from exc
        out.append((record.id, vec))
    return out
