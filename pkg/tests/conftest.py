import numpy as np
import pytest

from stpc.range_image import AngularResolution, RangeImage, pixel_ray_grid


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    """Compile/load every jitted kernel once so timed tests measure the
    codec rather than the JIT."""
    from stpc.bitstream import CodecConfig, compress, decompress
    from stpc.synth import generate_sequence, make_corridor

    res = AngularResolution()
    clouds, poses, _, _, _ = generate_sequence(
        make_corridor(), 2, res, 64, 8, 1.48, velocity=(0.1, 0.0, 0.0)
    )
    cfg = CodecConfig(mode="stream", n_frames=2, w=64, h=8, res=res)
    decompress(compress(clouds, cfg, poses=poses)[0])


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def sector_res(w: int, h: int, az_span: float = np.pi / 2, el_span: float = 0.5):
    """Angular resolution for a w x h sector covering the given spans."""
    return AngularResolution(theta_r=az_span / w, phi_r=el_span / h)


def analytic_plane_image(
    a: float,
    b: float,
    c: float,
    w: int,
    h: int,
    res: AngularResolution,
    phi_offset: float,
    jitter: float = 0.0,
    rng=None,
    r_min: float = 0.2,
    r_max_gen: float = 120.0,
) -> RangeImage:
    """Range image of the plane x + a*y + b*z = c, ranges from analytic
    ray casting.  jitter > 0 samples ray angles inside each pixel instead
    of at centers, mimicking real returns that are not grid-aligned."""
    if jitter:
        uu, vv = np.meshgrid(np.arange(w), np.arange(h))
        uu = uu + 0.5 + (rng.random((h, w)) - 0.5) * jitter
        vv = vv + 0.5 + (rng.random((h, w)) - 0.5) * jitter
        theta = uu * res.theta_r
        phi = phi_offset + vv * res.phi_r
        sp = np.sin(phi)
        dirs = np.stack([sp * np.sin(theta), sp * np.cos(theta), np.cos(phi)], axis=-1)
    else:
        dirs = pixel_ray_grid(w, h, res, phi_offset)
    den = dirs[..., 0] + a * dirs[..., 1] + b * dirs[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = c / den
    valid = np.isfinite(r) & (r > r_min) & (r <= r_max_gen)
    return RangeImage(
        ranges=np.where(valid, r, 0.0),
        valid=valid,
        res=res,
        phi_offset=phi_offset,
    )


_PATCH_SPANS = {
    # (azimuth span lo/hi, elevation span lo/hi) in radians
    "tile": ((0.002, 0.02), (0.004, 0.03)),
    "mid": ((0.05, 0.25), (0.04, 0.2)),
    "wide": ((0.3, 0.8), (0.2, 0.5)),
}


def random_plane_tile(
    rng, n_samples: int = 16, noise: float = 0.0, cond_cap: float = 1e7, patch: str = "tile"
):
    """(dirs, ranges) samples of a random plane through an angular patch.

    ``patch`` picks the angular footprint: "tile" is 4x4-pixel scale (its
    normal matrix conditioning runs 1e4-1e7), "mid"/"wide" give benignly
    conditioned sample sets for oracle-agreement tests.
    """
    du_span, dv_span = _PATCH_SPANS[patch]
    while True:
        # Plane with a healthy x normal component, 2-40 m from the sensor.
        a = rng.uniform(-0.8, 0.8)
        b = rng.uniform(-0.8, 0.8)
        theta0 = rng.uniform(-0.5, 0.5)
        phi0 = rng.uniform(1.2, 1.9)
        du = rng.uniform(*du_span)
        dv = rng.uniform(*dv_span)
        theta = theta0 + rng.uniform(0, du, n_samples)
        phi = phi0 + rng.uniform(0, dv, n_samples)
        sp = np.sin(phi)
        dirs = np.stack([sp * np.sin(theta), sp * np.cos(theta), np.cos(phi)], axis=1)
        den = dirs @ np.array([1.0, a, b])
        if np.min(np.abs(den)) < 0.5:
            continue
        c = rng.uniform(2.0, 40.0) * np.sign(den[0])
        ranges = c / den
        if np.any(ranges <= 0.2) or np.any(ranges > 150.0):
            continue
        pts = ranges[:, None] * dirs
        design = np.stack([pts[:, 1], pts[:, 2], -np.ones(n_samples)], axis=1)
        if np.linalg.cond(design.T @ design) > cond_cap:
            continue
        if noise:
            ranges = ranges + rng.normal(0.0, noise, n_samples)
        return dirs, ranges, (a, b, c)
