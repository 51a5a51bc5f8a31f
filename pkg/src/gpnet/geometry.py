"""Angular geometry of masked Gaussian layers.

For a wide random layer W with N(0, 1/m) entries, the expectation of
W_{+,r}^T W_{+,s} over W (where W_{+,v} = diag(Wv > 0) W keeps only rows
active at v) depends on r and s only through the angle theta between
them:

    Q_{r,s} = ((pi - theta) / (2 pi)) I + (sin theta / (2 pi)) M,

with M the reflector across the bisector of r and s inside span(r, s)
(identity on the orthogonal complement contributes nothing because M
only enters through the rank-2 part).  In the Gram-Schmidt frame
u1 = rhat, u2 = unit part of shat orthogonal to u1,

    M = cos(theta) (u1 u1^T - u2 u2^T) + sin(theta) (u1 u2^T + u2 u1^T).

Eigenvalues of Q are ((pi - theta) +- sin theta) / (2 pi) on span(r, s)
and (pi - theta)/(2 pi) off it, so the spectral norm never exceeds 1/2.

Feeding both vectors through one masked layer contracts their angle by

    g(theta) = arccos(((pi - theta) cos theta + sin theta) / pi),

whose d-fold iteration drives the closed-form vector h_tilde that
predicts <Lambda_x^T Lambda_y y> to leading order.
"""

from dataclasses import dataclass
import math
import warnings

import numpy as np

from .errors import ValidationError

_COLLINEAR_TOL = 1e-12
_TINY_ANGLE = 1e-12
_QLIP_CONST = 2.0 / math.pi + 2.0 * math.sqrt(79.0)


def _finite_vector(v, name):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError(f"{name} must be a nonempty vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} contains non-finite entries")
    return v


def spectral_norm(mat):
    """Largest singular value.

    Dense decompositions up to side 2000 (eigendecomposition when the
    matrix is exactly symmetric, SVD otherwise), deterministic power
    iteration on A^T A beyond that (relative tolerance 1e-9, at most
    10^4 iterations).
    """
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2:
        raise ValidationError(f"spectral_norm expects a matrix, got shape {mat.shape}")
    if mat.size == 0:
        return 0.0
    if max(mat.shape) <= 2000:
        if mat.shape[0] == mat.shape[1] and np.array_equal(mat, mat.T):
            return float(np.max(np.abs(np.linalg.eigvalsh(mat))))
        return float(np.linalg.norm(mat, 2))
    v = np.ones(mat.shape[1]) / math.sqrt(mat.shape[1])
    est = 0.0
    for _ in range(10000):
        w = mat.T @ (mat @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new_est = math.sqrt(nw)  # ||A^T A v|| -> sigma_max^2 at convergence
        v = w / nw
        if abs(new_est - est) <= 1e-9 * max(new_est, 1.0):
            return new_est
        est = new_est
    return est


def angle_between(x, y):
    """Angle in [0, pi]; exactly 0.0 for bitwise-identical inputs."""
    x = _finite_vector(x, "x")
    y = _finite_vector(y, "y")
    if x.shape != y.shape:
        raise ValidationError(f"shape mismatch {x.shape} vs {y.shape}")
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise ValidationError("angle undefined for zero vectors")
    if np.array_equal(x, y):
        return 0.0
    c = float(np.dot(x, y) / (nx * ny))
    theta = math.acos(min(1.0, max(-1.0, c)))
    return 0.0 if theta < _TINY_ANGLE else theta


@dataclass(frozen=True)
class DistortionMatrix:
    """Q_{r,s} together with the angle and the unit vectors that framed it.

    r_hat and s_hat are None when either input was the zero vector (the
    convention sets Q = 0 there).
    """

    theta: float
    q: np.ndarray
    r_hat: np.ndarray | None
    s_hat: np.ndarray | None


def q_matrix(r, s):
    """Expected masked-layer Gram matrix Q_{r,s} for directions r and s.

    Zero inputs give Q = 0.  Angles below 1e-12 are treated as zero, in
    which case Q is exactly I/2.  Collinear opposite vectors give the
    zero matrix, matching the theta -> pi limit.
    """
    r = _finite_vector(r, "r")
    s = _finite_vector(s, "s")
    if r.shape != s.shape:
        raise ValidationError(f"shape mismatch {r.shape} vs {s.shape}")
    n = r.shape[0]
    nr = np.linalg.norm(r)
    ns = np.linalg.norm(s)
    if nr == 0.0 or ns == 0.0:
        return DistortionMatrix(theta=0.0, q=np.zeros((n, n)), r_hat=None, s_hat=None)
    u1 = r / nr
    s_hat = s / ns
    c = float(np.dot(u1, s_hat))
    c = min(1.0, max(-1.0, c))
    theta = math.acos(c)
    if theta < _TINY_ANGLE:
        return DistortionMatrix(theta=0.0, q=np.eye(n) / 2.0, r_hat=u1, s_hat=s_hat)
    w = s_hat - c * u1
    nw = np.linalg.norm(w)
    if nw <= _COLLINEAR_TOL:
        # numerically collinear; acos near +-1 resolves angles no finer
        # than ~1e-8, so the zero-angle test above can miss the parallel
        # case and the cosine sign has to split the two limits
        if c > 0.0:
            return DistortionMatrix(theta=0.0, q=np.eye(n) / 2.0, r_hat=u1,
                                    s_hat=s_hat)
        m = np.zeros((n, n))
        theta = math.pi
    else:
        u2 = w / nw
        m = (math.cos(theta) * (np.outer(u1, u1) - np.outer(u2, u2))
             + math.sin(theta) * (np.outer(u1, u2) + np.outer(u2, u1)))
    q = ((math.pi - theta) / (2.0 * math.pi)) * np.eye(n) \
        + (math.sin(theta) / (2.0 * math.pi)) * m
    return DistortionMatrix(theta=theta, q=q, r_hat=u1, s_hat=s_hat)


def g_theta(theta):
    """One-layer angle contraction g(theta) = arccos(((pi-t) cos t + sin t)/pi).

    Defined on [0, pi]; inputs outside are clamped with a RuntimeWarning.
    Fixed point at 0, g(pi) = pi/2, and |g(a) - g(b)| <= |a - b|.
    """
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValidationError("theta must be finite")
    if theta < 0.0 or theta > math.pi:
        warnings.warn(f"theta={theta} outside [0, pi], clamping", RuntimeWarning,
                      stacklevel=2)
        theta = min(math.pi, max(0.0, theta))
    arg = ((math.pi - theta) * math.cos(theta) + math.sin(theta)) / math.pi
    return math.acos(min(1.0, max(-1.0, arg)))


@dataclass(frozen=True)
class AngleProfile:
    """Iterated angles theta_bar_i and the direction vector h_tilde.

    theta_bar[0] is the angle between the latent pair, theta_bar[i] its
    i-fold contraction under g.  h_tilde approximates Lambda_x^T Lambda_y y
    for a depth-d net through that pair.
    """

    x: np.ndarray
    y: np.ndarray
    depth: int
    theta_bar: tuple
    h_tilde: np.ndarray


def angle_profile(x, y, depth):
    """Angles theta_bar_0..theta_bar_{d-1} plus h_tilde for depth d >= 1.

    h_tilde = 2^{-d} [ prod_{i<d} (pi - tb_i)/pi * y
                       + sum_{i=1}^{d-1} sin(tb_i)/pi
                         * prod_{j=i+1}^{d-1} (pi - tb_j)/pi * |y| xhat ].

    With x = y every tb_i is 0 and h_tilde is exactly y / 2^d.
    """
    depth = int(depth)
    if depth < 1:
        raise ValidationError(f"depth must be >= 1, got {depth}")
    x = _finite_vector(x, "x")
    y = _finite_vector(y, "y")
    if x.shape != y.shape:
        raise ValidationError(f"shape mismatch {x.shape} vs {y.shape}")
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise ValidationError("angle profile undefined for zero vectors")

    tb = [angle_between(x, y)]
    for _ in range(depth - 1):
        tb.append(g_theta(tb[-1]))

    shrink = 1.0
    for t in tb:
        shrink *= (math.pi - t) / math.pi

    coeff = 0.0  # multiplies |y| xhat
    for i in range(1, depth):
        term = math.sin(tb[i]) / math.pi
        for j in range(i + 1, depth):
            term *= (math.pi - tb[j]) / math.pi
        coeff += term

    h = (shrink * y + coeff * ny * (x / nx)) / 2.0 ** depth
    return AngleProfile(x=x.copy(), y=y.copy(), depth=depth,
                        theta_bar=tuple(tb), h_tilde=h)


def q_lipschitz_gap(r, r_t, s, s_t):
    """How far Q moves when its unit-vector arguments move.

    All four inputs must be unit vectors (norm within 1e-8 of one).
    Returns (gap, bound) where gap = ||Q_{r,s} - Q_{r_t,s_t}|| and
    bound = (2/pi + 2 sqrt(79)) * max(||r_t - r||, ||s_t - s||).
    """
    vecs = [_finite_vector(v, n) for v, n in
            ((r, "r"), (r_t, "r_t"), (s, "s"), (s_t, "s_t"))]
    for v, name in zip(vecs, ("r", "r_t", "s", "s_t")):
        if abs(np.linalg.norm(v) - 1.0) > 1e-8:
            raise ValidationError(f"{name} must be a unit vector")
    r, r_t, s, s_t = vecs
    eps = max(float(np.linalg.norm(r_t - r)), float(np.linalg.norm(s_t - s)))
    gap = spectral_norm(q_matrix(r, s).q - q_matrix(r_t, s_t).q)
    return gap, _QLIP_CONST * eps
