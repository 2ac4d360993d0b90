"""On-disk formats: PGM frames, binary grids, fingerprints, reports.

Everything here is deterministic: the same objects always serialize to
the same bytes, and every reader validates structure and integrity
before constructing domain objects.
"""

import csv
import io
import json
import os
import zlib

import numpy as np

from .diffuse import SubbandFeature
from .errors import FormatError, ParameterError
from .evaluation import EvalReport, FittedPDF, ScoreSample
from .model import Frame, HeightMap, LightPose, NormMap, VideoClip
from .registration import SimilarityTransform
from .specular import Fingerprint, SpecularPointSet

PGM_MAXVAL = 65535


# ------------------------------------------------------------------- PGM


def quantize_u16(pixels, gain: float) -> np.ndarray:
    """Scale float intensities by gain and clip into the 16-bit range."""
    if gain <= 0:
        raise ParameterError(f"gain must be > 0, got {gain}")
    scaled = np.rint(np.asarray(pixels, dtype=np.float64) * gain)
    return np.clip(scaled, 0, PGM_MAXVAL).astype(np.uint16)


def write_pgm(path, grid: np.ndarray) -> None:
    """16-bit big-endian binary PGM (P5, maxval 65535)."""
    grid = np.asarray(grid)
    if grid.dtype != np.uint16 or grid.ndim != 2:
        raise ParameterError("PGM payload must be a 2-D uint16 grid")
    rows, cols = grid.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n{PGM_MAXVAL}\n".encode("ascii"))
        fh.write(grid.astype(">u2").tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    # header: magic, dims, maxval as whitespace-separated ASCII tokens
    tokens, pos = [], 0
    while len(tokens) < 4 and pos < len(data):
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":  # comment runs to end of line
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if len(tokens) != 4 or tokens[0] != b"P5":
        raise FormatError("not a binary PGM file")
    try:
        cols, rows, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as e:
        raise FormatError(f"bad PGM header: {e}") from e
    if maxval != PGM_MAXVAL:
        raise FormatError(f"expected 16-bit PGM (maxval {PGM_MAXVAL}), got {maxval}")
    pos += 1  # single whitespace byte after maxval
    payload = data[pos : pos + rows * cols * 2]
    if len(payload) != rows * cols * 2:
        raise FormatError("truncated PGM payload")
    return np.frombuffer(payload, dtype=">u2").reshape(rows, cols).astype(np.uint16)


# ----------------------------------------------------------- clip folders


def save_clip(out_dir, clip: VideoClip, gain: float = None) -> None:
    """Write a clip as numbered PGM frames plus JSON metadata.

    uint16 frames are written as-is; float frames need an explicit gain.
    """
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for i, f in enumerate(clip.frames):
        if f.pixels.dtype == np.uint16:
            grid = f.pixels
        else:
            if gain is None:
                raise ParameterError("float frames need an explicit gain to quantize")
            grid = quantize_u16(f.pixels, gain)
        name = f"frame_{i:04d}.pgm"
        write_pgm(os.path.join(out_dir, name), grid)
        meta = {"t": f.t, "light_position": list(f.light.position), "light_kind": f.light.kind}
        with open(os.path.join(out_dir, name + ".json"), "w") as fh:
            json.dump(meta, fh, sort_keys=True)
            fh.write("\n")
        names.append(name)
    manifest = {
        "chip_id": clip.chip_id,
        "clip_id": clip.clip_id,
        "frame_count": len(names),
        "frames": names,
        "gain": gain,
    }
    with open(os.path.join(out_dir, "clip.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_clip(clip_dir) -> VideoClip:
    """Read a clip folder back; pixels come out as float32 in [0, 1]."""
    try:
        with open(os.path.join(clip_dir, "clip.json")) as fh:
            manifest = json.load(fh)
        names = manifest["frames"]
        chip_id, clip_id = manifest["chip_id"], manifest["clip_id"]
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise FormatError(f"unreadable clip manifest in {clip_dir}: {e}") from e
    frames = []
    for name in names:
        grid = read_pgm(os.path.join(clip_dir, name))
        try:
            with open(os.path.join(clip_dir, name + ".json")) as fh:
                meta = json.load(fh)
            light = LightPose(tuple(meta["light_position"]), meta.get("light_kind", "point"))
            t = int(meta["t"])
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as e:
            raise FormatError(f"unreadable frame metadata for {name}: {e}") from e
        frames.append(Frame(pixels=grid.astype(np.float32) / PGM_MAXVAL, light=light, t=t))
    return VideoClip(frames=frames, chip_id=chip_id, clip_id=clip_id)


# ----------------------------------------------------- binary grid records


def _write_grid_record(path, magic, dims, pitch, seed, tag, arrays) -> None:
    if " " in tag or not tag:
        raise ParameterError(f"bad grid tag {tag!r}")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    header = f"{magic} {dims[0]} {dims[1]} {pitch:.17g} {seed} <f8 {tag} {crc:08x}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(payload)


def _read_grid_record(path, magic, n_arrays):
    with open(path, "rb") as fh:
        header = fh.readline()
        payload = fh.read()
    fields = header.decode("ascii", errors="replace").split()
    if len(fields) != 8 or fields[0] != magic:
        raise FormatError(f"bad {magic} header")
    try:
        rows, cols = int(fields[1]), int(fields[2])
        pitch = float(fields[3])
        seed = int(fields[4])
        crc = int(fields[7], 16)
    except ValueError as e:
        raise FormatError(f"bad {magic} header field: {e}") from e
    if fields[5] != "<f8":
        raise FormatError(f"unsupported grid dtype {fields[5]!r}")
    expect = rows * cols * 8 * n_arrays
    if len(payload) != expect:
        raise FormatError(f"grid payload is {len(payload)} bytes, expected {expect}")
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise FormatError("grid payload failed its integrity check")
    flat = np.frombuffer(payload, dtype="<f8")
    arrays = [
        flat[i * rows * cols : (i + 1) * rows * cols].reshape(rows, cols).copy()
        for i in range(n_arrays)
    ]
    return rows, cols, pitch, seed, fields[6], arrays


def write_heightmap(path, hm: HeightMap) -> None:
    _write_grid_record(path, "CHIPHM1", hm.heights.shape, hm.pitch, hm.seed, "h", [hm.heights])


def read_heightmap(path) -> HeightMap:
    *_, pitch, seed, tag, arrays = _read_grid_record(path, "CHIPHM1", 1)
    if tag != "h":
        raise FormatError(f"unexpected height record tag {tag!r}")
    return HeightMap(heights=arrays[0], pitch=pitch, seed=seed)


def write_normmap(path, nm: NormMap) -> None:
    _write_grid_record(path, "CHIPNM1", nm.nx.shape, nm.pitch, 0, nm.source, [nm.nx, nm.ny])


def read_normmap(path) -> NormMap:
    *_, pitch, _seed, tag, arrays = _read_grid_record(path, "CHIPNM1", 2)
    return NormMap(nx=arrays[0], ny=arrays[1], pitch=pitch, source=tag)


def write_subband(path, sb: SubbandFeature) -> None:
    _write_grid_record(
        path, "CHIPSB1", sb.coefficients.shape, 0.0, 0, f"band{sb.band_index}", [sb.coefficients]
    )


def read_subband(path) -> SubbandFeature:
    *_, _pitch, _seed, tag, arrays = _read_grid_record(path, "CHIPSB1", 1)
    if not tag.startswith("band"):
        raise FormatError(f"unexpected subband tag {tag!r}")
    try:
        band_index = int(tag[4:])
    except ValueError as e:
        raise FormatError(f"bad subband tag {tag!r}") from e
    return SubbandFeature(band_index=band_index, coefficients=arrays[0])


# -------------------------------------------------------------- transforms


def format_transform(t: SimilarityTransform) -> str:
    return f"{t.scale:.12g} {t.rotation:.12g} {t.tx:.12g} {t.ty:.12g}"


def parse_transform(text: str) -> SimilarityTransform:
    fields = text.split()
    if len(fields) != 4:
        raise FormatError(f"transform record needs 4 fields, got {len(fields)}")
    try:
        scale, rotation, tx, ty = (float(f) for f in fields)
    except ValueError as e:
        raise FormatError(f"bad transform field: {e}") from e
    return SimilarityTransform(scale=scale, rotation=rotation, tx=tx, ty=ty)


def write_transform(path, t: SimilarityTransform) -> None:
    with open(path, "w") as fh:
        fh.write(format_transform(t) + "\n")


def read_transform(path) -> SimilarityTransform:
    with open(path) as fh:
        return parse_transform(fh.read())


# ------------------------------------------------------------ fingerprints


def _id_token(value: str, what: str) -> str:
    if value == "":
        return "-"
    if any(ch.isspace() for ch in value):
        raise ParameterError(f"{what} {value!r} must not contain whitespace")
    return value


def fingerprint_to_text(fp: Fingerprint) -> str:
    lines = [
        "CHIPFP1 {} {} {} {} {} {}".format(
            _id_token(fp.chip_id, "chip_id"),
            _id_token(fp.clip_id, "clip_id"),
            fp.n_points,
            fp.frame_count,
            _id_token(fp.mask_digest, "mask digest"),
            fp.sample_seed,
        )
    ]
    for s in fp.frames:
        coords = " ".join(f"{r},{c}" for r, c in s.points)
        lines.append(f"{s.frame_id} {coords}")
    return "\n".join(lines) + "\n"


def fingerprint_from_text(text: str) -> Fingerprint:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError("empty fingerprint record")
    fields = lines[0].split()
    if len(fields) != 7 or fields[0] != "CHIPFP1":
        raise FormatError("bad fingerprint header")
    try:
        n_points, count, seed = int(fields[3]), int(fields[4]), int(fields[6])
    except ValueError as e:
        raise FormatError(f"bad fingerprint header field: {e}") from e
    if len(lines) - 1 != count:
        raise FormatError(f"header promises {count} frames, found {len(lines) - 1}")
    frames = []
    for ln in lines[1:]:
        toks = ln.split()
        if len(toks) != n_points + 1:
            raise FormatError(f"frame line has {len(toks) - 1} points, expected {n_points}")
        try:
            frame_id = int(toks[0])
            pts = np.array([[int(a) for a in tok.split(",")] for tok in toks[1:]])
        except ValueError as e:
            raise FormatError(f"bad point coordinates: {e}") from e
        if pts.shape != (n_points, 2):
            raise FormatError("malformed point list")
        try:
            frames.append(SpecularPointSet(points=pts, frame_id=frame_id))
        except ParameterError as e:
            raise FormatError(str(e)) from e
    unescape = lambda v: "" if v == "-" else v
    try:
        return Fingerprint(
            chip_id=unescape(fields[1]),
            clip_id=unescape(fields[2]),
            frames=frames,
            mask_digest=unescape(fields[5]),
            n_points=n_points,
            sample_seed=seed,
        )
    except ParameterError as e:
        raise FormatError(str(e)) from e


def write_fingerprint(path, fp: Fingerprint) -> None:
    with open(path, "w") as fh:
        fh.write(fingerprint_to_text(fp))


def read_fingerprint(path) -> Fingerprint:
    try:
        with open(path) as fh:
            return fingerprint_from_text(fh.read())
    except OSError as e:
        raise FormatError(f"cannot read fingerprint {path}: {e}") from e


# ----------------------------------------------------------------- reports


def report_to_json(report: EvalReport) -> str:
    obj = {
        "statistic_kind": report.statistic_kind,
        "eer": {
            "laplace": report.eer_laplace,
            "gaussian": report.eer_gaussian,
            "empirical": report.eer_empirical,
        },
        "thresholds": {
            "laplace": report.threshold_laplace,
            "gaussian": report.threshold_gaussian,
            "empirical": report.threshold_at_eer,
        },
        "fits": {
            key: {"family": f.family, "location": f.location, "scale": f.scale}
            for key, f in report.fits.items()
        },
        "config": report.config,
        "samples": [
            {
                "value": s.value,
                "label": s.label,
                "pair": [list(s.pair[0]), list(s.pair[1])],
                "statistic_kind": s.statistic_kind,
            }
            for s in report.samples
        ],
    }
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def report_from_json(text: str) -> EvalReport:
    try:
        obj = json.loads(text)
        samples = [
            ScoreSample(
                value=float(s["value"]),
                label=s["label"],
                pair=(tuple(s["pair"][0]), tuple(s["pair"][1])),
                statistic_kind=s["statistic_kind"],
            )
            for s in obj["samples"]
        ]
        fits = {
            key: FittedPDF(family=f["family"], location=f["location"], scale=f["scale"])
            for key, f in obj["fits"].items()
        }
        return EvalReport(
            samples=samples,
            fits=fits,
            eer_laplace=obj["eer"]["laplace"],
            eer_gaussian=obj["eer"]["gaussian"],
            eer_empirical=obj["eer"]["empirical"],
            threshold_laplace=obj["thresholds"]["laplace"],
            threshold_gaussian=obj["thresholds"]["gaussian"],
            threshold_at_eer=obj["thresholds"]["empirical"],
            statistic_kind=obj["statistic_kind"],
            config=obj["config"],
        )
    except (json.JSONDecodeError, KeyError, TypeError, IndexError, ParameterError) as e:
        raise FormatError(f"bad report document: {e}") from e


def write_report(path, report: EvalReport) -> None:
    with open(path, "w") as fh:
        fh.write(report_to_json(report))


def read_report(path) -> EvalReport:
    with open(path) as fh:
        return report_from_json(fh.read())


def report_density_csv(report: EvalReport, n_points: int = 200) -> str:
    """Fitted-PDF curves as (value, density, label) rows for plotting."""
    if n_points < 2:
        raise ParameterError(f"need at least 2 curve points, got {n_points}")
    values = np.array([s.value for s in report.samples], dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    pad = 0.05 * (hi - lo) if hi > lo else 1.0
    xs = np.linspace(lo - pad, hi + pad, n_points)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["value", "density", "label"])
    for key in sorted(report.fits):
        fit = report.fits[key]
        for x, d in zip(xs, fit.pdf(xs)):
            writer.writerow([f"{x:.10g}", f"{d:.10g}", key])
    return out.getvalue()


def write_density_csv(path, report: EvalReport, n_points: int = 200) -> None:
    with open(path, "w") as fh:
        fh.write(report_density_csv(report, n_points))
