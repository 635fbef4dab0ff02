"""On-disk formats: PLY clouds, PGM-16 depth, FMAP feature grids, 4x4 pose
text, binary PPM images, key=value run configuration.

Binary round trips are exact; ASCII PLY round trips to 1e-6. Every loader
rejects non-finite payloads so NaN never enters the pipeline.
"""

import hashlib
import struct
from dataclasses import dataclass, fields, replace

import numpy as np

from .base import check_array, check_finite
from .core import CameraIntrinsics, PointCloud, RigidTransform, _project_to_rotation
from .descriptor import DescriptorSet
from .projection import DepthMap

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1


class ParseError(ValueError):
    """Malformed file content; message carries the offending location."""


# ---------------------------------------------------------------- PLY

def save_ply(cloud: PointCloud, path, binary=True):
    n = len(cloud)
    props = ["property float x", "property float y", "property float z"]
    if cloud.normals is not None:
        props += ["property float nx", "property float ny", "property float nz"]
    if cloud.colors is not None:
        props += ["property uchar red", "property uchar green", "property uchar blue"]
    fmt = "binary_little_endian" if binary else "ascii"
    header = "\n".join(
        ["ply", f"format {fmt} 1.0", f"element vertex {n}", *props, "end_header", ""]
    )
    cols = [cloud.points.astype("<f4")]
    if cloud.normals is not None:
        cols.append(cloud.normals.astype("<f4"))
    rgb = None
    if cloud.colors is not None:
        rgb = np.rint(cloud.colors * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        if binary:
            float_part = np.hstack(cols)
            for i in range(n):
                f.write(float_part[i].tobytes())
                if rgb is not None:
                    f.write(rgb[i].tobytes())
        else:
            for i in range(n):
                row = " ".join(f"{v:.8g}" for v in np.hstack([c[i] for c in cols]))
                if rgb is not None:
                    row += " " + " ".join(str(v) for v in rgb[i])
                f.write((row + "\n").encode("ascii"))


_PLY_TYPES = {
    "float": ("<f4", 4), "float32": ("<f4", 4), "double": ("<f8", 8), "float64": ("<f8", 8),
    "uchar": ("u1", 1), "uint8": ("u1", 1), "char": ("i1", 1), "int8": ("i1", 1),
    "ushort": ("<u2", 2), "uint16": ("<u2", 2), "short": ("<i2", 2), "int16": ("<i2", 2),
    "uint": ("<u4", 4), "uint32": ("<u4", 4), "int": ("<i4", 4), "int32": ("<i4", 4),
}


def load_ply(path) -> PointCloud:
    with open(path, "rb") as f:
        raw = f.read()
    # header is ASCII up to end_header
    end = raw.find(b"end_header")
    if end < 0:
        raise ParseError(f"{path}: no end_header")
    header_lines = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[raw.index(b"\n", end) + 1:]
    fmt = None
    n_vertex = None
    properties = []
    in_vertex = False
    for lineno, line in enumerate(header_lines, start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"{path}:{lineno}: unsupported format {tok[1]}")
            fmt = tok[1]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                try:
                    n_vertex = int(tok[2])
                except (IndexError, ValueError):
                    raise ParseError(f"{path}:{lineno}: bad element count") from None
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise ParseError(f"{path}:{lineno}: list properties unsupported")
            if tok[1] not in _PLY_TYPES:
                raise ParseError(f"{path}:{lineno}: unknown type {tok[1]}")
            properties.append((tok[2], tok[1]))
    if fmt is None or n_vertex is None:
        raise ParseError(f"{path}: header missing format or vertex element")
    names = [p[0] for p in properties]
    for axis in "xyz":
        if axis not in names:
            raise ParseError(f"{path}: missing vertex property {axis!r}")
    if fmt == "ascii":
        rows = body.decode("ascii", errors="replace").split()
        want = n_vertex * len(properties)
        if len(rows) < want:
            raise ParseError(f"{path}: expected {want} values, found {len(rows)}")
        try:
            table = np.array(rows[:want], dtype=np.float64).reshape(n_vertex, len(properties))
        except ValueError as e:
            raise ParseError(f"{path}: non-numeric vertex data ({e})") from None
        columns = {name: table[:, i] for i, (name, _) in enumerate(properties)}
        scale = {name: 255.0 if typ in ("uchar", "uint8") else 1.0 for name, typ in properties}
    else:
        dtype = np.dtype([(name, _PLY_TYPES[typ][0]) for name, typ in properties])
        want = n_vertex * dtype.itemsize
        if len(body) < want:
            raise ParseError(f"{path}: expected {want} body bytes, found {len(body)}")
        rec = np.frombuffer(body[:want], dtype=dtype)
        columns = {name: rec[name].astype(np.float64) for name, _ in properties}
        scale = {name: 255.0 if typ in ("uchar", "uint8") else 1.0 for name, typ in properties}
    points = np.column_stack([columns["x"], columns["y"], columns["z"]])
    check_finite(points, f"{path}: coordinates")
    colors = None
    if all(c in columns for c in ("red", "green", "blue")):
        colors = np.column_stack([
            columns[c] / scale[c] for c in ("red", "green", "blue")
        ])
    normals = None
    if all(c in columns for c in ("nx", "ny", "nz")):
        normals = np.column_stack([columns["nx"], columns["ny"], columns["nz"]])
        norms = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = normals / np.where(norms > 0, norms, 1.0)
        normals[norms[:, 0] == 0] = (0.0, 0.0, 1.0)
    return PointCloud(points, colors=colors, normals=normals)


# ---------------------------------------------------------------- PGM-16 depth

def save_depth(depth: DepthMap, path, scale=0.001):
    """16-bit binary PGM; pixel = round(depth/scale), 0 = invalid."""
    units = np.rint(depth.depths / scale)
    if units.max() > 65535:
        raise ValueError("depth exceeds 16-bit range at this scale")
    arr = units.astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{depth.width} {depth.height}\n65535\n".encode("ascii"))
        f.write(arr.tobytes())


def _read_pnm_header(raw, path, magic):
    if not raw.startswith(magic):
        raise ParseError(f"{path}: not a {magic.decode()} file")
    pos = 2
    vals = []
    while len(vals) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        try:
            vals.append(int(raw[start:pos]))
        except ValueError:
            raise ParseError(f"{path}: bad header token {raw[start:pos]!r}") from None
    return vals[0], vals[1], vals[2], pos + 1


def load_depth(path, intrinsics: CameraIntrinsics, scale=0.001) -> DepthMap:
    with open(path, "rb") as f:
        raw = f.read()
    width, height, maxval, off = _read_pnm_header(raw, path, b"P5")
    if maxval != 65535:
        raise ParseError(f"{path}: depth PGM must have maxval 65535, got {maxval}")
    want = width * height * 2
    if len(raw) - off < want:
        raise ParseError(f"{path}: expected {want} pixel bytes, found {len(raw) - off}")
    units = np.frombuffer(raw[off:off + want], dtype=">u2").reshape(height, width)
    return DepthMap(units.astype(np.float64) * scale, intrinsics)


# ---------------------------------------------------------------- PPM images

def save_image(image, path):
    """RGB in [0,1] -> binary PPM (P6, maxval 255)."""
    image = check_array(image, "image", shape=(None, None, 3))
    arr = np.rint(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def load_image(path):
    with open(path, "rb") as f:
        raw = f.read()
    width, height, maxval, off = _read_pnm_header(raw, path, b"P6")
    if maxval != 255:
        raise ParseError(f"{path}: image PPM must have maxval 255, got {maxval}")
    want = width * height * 3
    if len(raw) - off < want:
        raise ParseError(f"{path}: expected {want} pixel bytes, found {len(raw) - off}")
    arr = np.frombuffer(raw[off:off + want], dtype=np.uint8).reshape(height, width, 3)
    return arr.astype(np.float64) / 255.0


# ---------------------------------------------------------------- FMAP

@dataclass(frozen=True)
class FeatureMapFile:
    """Feature grid on disk: (height, width, dim) float32, row-major."""

    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError("feature map must be (height, width, dim)")
        if 0 in data.shape:
            raise ValueError(f"feature map dims must be positive, got {data.shape}")
        check_finite(data, "feature map")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def dim(self):
        return self.data.shape[2]


def save_fmap(fmap: FeatureMapFile, path):
    with open(path, "wb") as f:
        f.write(FMAP_MAGIC)
        f.write(struct.pack("<IIII", FMAP_VERSION, fmap.height, fmap.width, fmap.dim))
        f.write(fmap.data.astype("<f4").tobytes())


def load_fmap(path) -> FeatureMapFile:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != FMAP_MAGIC:
        raise ParseError(f"{path}: bad magic {raw[:4]!r}")
    version, h, w, d = struct.unpack("<IIII", raw[4:20])
    if version != FMAP_VERSION:
        raise ParseError(f"{path}: unsupported version {version}")
    if h == 0 or w == 0 or d == 0:
        raise ParseError(f"{path}: zero dimension in ({h}, {w}, {d})")
    want = h * w * d * 4
    got = len(raw) - 20
    if got != want:
        raise ParseError(f"{path}: expected {want} payload bytes, found {got}")
    data = np.frombuffer(raw[20:], dtype="<f4").reshape(h, w, d)
    check_finite(data, f"{path}: payload")
    return FeatureMapFile(data)


def load_external_descriptors(path, cloud: PointCloud) -> DescriptorSet:
    """Per-point descriptor rows in the FMAP envelope: (count, 1, dim)."""
    fmap = load_fmap(path)
    if fmap.width != 1:
        raise ParseError(f"{path}: descriptor files use width 1, got {fmap.width}")
    if fmap.height != len(cloud):
        raise ParseError(
            f"{path}: {fmap.height} descriptor rows for a {len(cloud)}-point cloud"
        )
    return DescriptorSet.from_array(fmap.data[:, 0, :].astype(np.float64))


def save_external_descriptors(desc: DescriptorSet, path):
    save_fmap(FeatureMapFile(desc.data[:, None, :].astype(np.float32)), path)


# ---------------------------------------------------------------- pose text

def save_pose(t: RigidTransform, path):
    with open(path, "w") as f:
        for row in t.matrix():
            f.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_pose(path) -> RigidTransform:
    with open(path) as f:
        rows = [line.split() for line in f if line.strip()]
    if len(rows) != 4 or any(len(r) != 4 for r in rows):
        raise ParseError(f"{path}: expected 4 lines of 4 numbers")
    try:
        mat = np.array(rows, dtype=np.float64)
    except ValueError:
        raise ParseError(f"{path}: non-numeric pose entry") from None
    if not np.allclose(mat[3], [0, 0, 0, 1], atol=1e-12):
        raise ParseError(f"{path}: last row must be 0 0 0 1, got {mat[3]}")
    rot = mat[:3, :3]
    if np.linalg.det(rot) < 0:
        raise ParseError(f"{path}: rotation block is a reflection (det < 0)")
    if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-3:
        raise ParseError(f"{path}: rotation block not orthonormal")
    if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-6:
        rot = _project_to_rotation(rot)
    return RigidTransform(rot, mat[:3, 3])


# ---------------------------------------------------------------- run config

@dataclass(frozen=True)
class RunConfig:
    """Flat run configuration; serialized as key=value lines."""

    fusion_weight: float = 0.5
    color_dim: int = 64
    ransac_iters: int = 50000
    inlier_threshold: float = 0.05
    diffusion_steps: int = 50
    seed: int = 0
    splat_radius: int = 1
    normal_k: int = 10
    fpfh_radius: float = 0.0          # 0 = auto (2.5x median NN spacing)
    beta_start: float = 1e-4
    beta_end: float = 0.2
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 8
    train_steps: int = 2000
    image_size: int = 64
    latent_channels: int = 8
    n_pairs: int = 8
    overlap: float = 0.5
    points_per_m2: float = 400.0
    n_boxes: int = 4
    xyz_weight: float = 1.0
    icp_refine: int = 0
    normalize_fusion_inputs: int = 0
    patch_dilations: str = "1,3"

    def dilations(self):
        try:
            parts = tuple(int(p) for p in self.patch_dilations.split(",") if p.strip())
        except ValueError:
            raise ValueError(f"bad patch_dilations {self.patch_dilations!r}") from None
        if not parts or any(d < 1 for d in parts):
            raise ValueError(f"bad patch_dilations {self.patch_dilations!r}")
        return parts

    def __post_init__(self):
        if not 0.0 <= self.fusion_weight <= 1.0:
            raise ValueError("fusion_weight must be in [0, 1]")
        if self.color_dim < 1:
            raise ValueError("color_dim must be >= 1")
        if self.ransac_iters < 1:
            raise ValueError("ransac_iters must be >= 1")
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")
        if self.diffusion_steps < 1:
            raise ValueError("diffusion_steps must be >= 1")

    def replace(self, **kw):
        return replace(self, **kw)

    def hash(self):
        return hashlib.sha256(serialize_config(self).encode()).hexdigest()[:16]


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        lines.append(f"{f.name}={getattr(cfg, f.name)!r}".replace("'", ""))
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path):
    with open(path, "w") as f:
        f.write(serialize_config(cfg))


def parse_config(text, base=None) -> RunConfig:
    """Parse key=value lines; '#' starts a comment; unknown keys are errors."""
    known = {f.name: f.type for f in fields(RunConfig)}
    kinds = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in known:
            raise ParseError(f"line {lineno}: unknown config key {key!r}")
        try:
            values[key] = kinds[key](val)
        except ValueError:
            raise ParseError(f"line {lineno}: bad value for {key}: {val!r}") from None
    base = base or RunConfig()
    return base.replace(**values)


def load_config(path, base=None) -> RunConfig:
    with open(path) as f:
        return parse_config(f.read(), base=base)
