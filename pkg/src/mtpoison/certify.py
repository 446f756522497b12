"""Lower bounds on the number of poisoning points, and the constants of the convergence bound."""
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import LossKind, empirical_loss, regularizer
from .oracle import max_loss_diff_hinge_exact


class CertificationError(ValueError):
    pass


@dataclass(frozen=True)
class Exact:
    name = "exact"

    def to_dict(self):
        return {"kind": self.name}


@dataclass(frozen=True)
class EpsilonRelaxed:
    eps: float
    k: float
    r_star: float
    name = "epsilon_relaxed"

    def to_dict(self):
        return {"kind": self.name, "eps": self.eps, "k": self.k, "r_star": self.r_star}


@dataclass
class TheoryConstants:
    gamma: float
    lipschitz_G: float
    reg_upper_r_star: float
    bidir_k: Optional[float] = None

    def regret_alpha_T(self, T):
        return regret_alpha(T, self.lipschitz_G)


@dataclass
class LowerBoundCertificate:
    bound: float
    bound_ceil: int
    witness_iteration: int
    valid: bool
    variant: object = field(default_factory=Exact)
    constants: Optional[TheoryConstants] = None

    def to_dict(self):
        c = self.constants
        return {
            "bound": self.bound,
            "bound_ceil": self.bound_ceil,
            "witness_iteration": self.witness_iteration,
            "valid": self.valid,
            "variant": self.variant.to_dict(),
            "constants": None if c is None else {"gamma": c.gamma, "G": c.lipschitz_G,
                                                 "r_star": c.reg_upper_r_star, "k": c.bidir_k},
        }


def _require_hinge(loss):
    if LossKind.parse(loss) is not LossKind.HINGE:
        raise CertificationError("lower bounds need the exact hinge oracle; logistic loss is not supported")


def _sup(theta, theta_p, domain, sup):
    return max_loss_diff_hinge_exact(theta, theta_p, domain).value if sup is None else float(sup)


def lower_bound_z(theta, theta_p, data, c_r, domain, loss=LossKind.HINGE, sup=None, clean_loss_p=None):
    """z(theta), or None when the denominator is not positive.

    ``sup`` may carry an already computed max loss difference of theta against theta_p;
    ``clean_loss_p`` an already computed L(theta_p; D_c).
    """
    _require_hinge(loss)
    Lp = empirical_loss(LossKind.HINGE, theta_p, data) if clean_loss_p is None else clean_loss_p
    L = empirical_loss(LossKind.HINGE, theta, data)
    Rp, R = regularizer(theta_p), regularizer(theta)
    num = Lp - L + data.n * c_r * (Rp - R)
    den = _sup(theta, theta_p, domain, sup) + c_r * (R - Rp)
    if not den > 0.0:
        return None
    return num / den


def lower_bound_eps(theta, theta_p, data, c_r, domain, eps, k, r_star, loss=LossKind.HINGE, sup=None,
                    clean_loss_p=None):
    """Relaxed bound z'(theta) for a target only known up to eps-closeness; clamped at 0."""
    _require_hinge(loss)
    if k <= 0 or r_star < 0 or eps < 0:
        raise ValueError("need k > 0, r_star >= 0 and eps >= 0")
    Lp = empirical_loss(LossKind.HINGE, theta_p, data) if clean_loss_p is None else clean_loss_p
    L = empirical_loss(LossKind.HINGE, theta, data)
    N = data.n
    num = Lp - L - N * c_r * r_star - N * k * eps
    den = _sup(theta, theta_p, domain, sup) + c_r * r_star + k * eps
    if not den > 0.0:
        return None
    return max(num / den, 0.0)


def _ceil(bound):
    return max(int(math.ceil(bound)), 0)


def best_lower_bound(iterates, theta_p, data, c_r, domain, loss=LossKind.HINGE, variant=None,
                     iterations=None, constants=None):
    """Max of z over intermediate models; undefined values are skipped.

    ``iterates`` is a sequence of models or an AttackTrace (its stored iterates are used).
    """
    _require_hinge(loss)
    if hasattr(iterates, "iterates"):
        iterations = iterates.iterate_ids()
        iterates = iterates.iterates
    iterates = list(iterates)
    if iterations is None:
        iterations = list(range(len(iterates)))
    variant = Exact() if variant is None else variant
    Lp = empirical_loss(LossKind.HINGE, theta_p, data)
    best, witness = None, -1
    for it, theta in zip(iterations, iterates):
        if isinstance(variant, EpsilonRelaxed):
            z = lower_bound_eps(theta, theta_p, data, c_r, domain, variant.eps, variant.k, variant.r_star,
                                clean_loss_p=Lp)
        else:
            z = lower_bound_z(theta, theta_p, data, c_r, domain, clean_loss_p=Lp)
        if z is not None and (best is None or z > best):
            best, witness = z, int(it)
    if best is None:
        raise CertificationError("no intermediate model gives a defined lower bound")
    return LowerBoundCertificate(float(best), _ceil(best), witness, True, variant, constants)


def gamma_svm(theta_p, c_r):
    return 1.0 - 2.0 * c_r * regularizer(theta_p)


def regret_alpha(T, G):
    """Regret of follow-the-leader with G-bounded gradients: (G^2/2)(1 + ln T)."""
    if T < 1:
        raise ValueError("T must be at least 1")
    return 0.5 * G * G * (1.0 + math.log(T))


def theoretical_eps(T, G, gamma, delta_clean_loss, reg_gap):
    """Distance guaranteed for the best of the first T iterates."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return (regret_alpha(T, G) + delta_clean_loss + reg_gap) / (T * gamma)


def bidirectional_constant(r, q):
    if r <= 0 or q <= 0:
        raise ValueError("r and q must be positive")
    return r * q


def default_r_star(c_r):
    if c_r <= 0:
        raise ValueError("c_r must be positive")
    return 1.0 / c_r


def estimate_G(domain, c_r, iterates):
    """sup ||x||_2 over the domain plus c_r times the largest iterate weight norm."""
    wmax = max((float(np.linalg.norm(m.weights)) for m in iterates), default=0.0)
    return domain.max_norm2() + c_r * wmax


def theory_constants(theta_p, c_r, domain, iterates, r=None, q=None):
    k = bidirectional_constant(r, q) if r is not None and q is not None else None
    return TheoryConstants(gamma_svm(theta_p, c_r), estimate_G(domain, c_r, iterates), default_r_star(c_r), k)


def write_certificate(cert, path):
    with open(path, "w") as fh:
        json.dump(cert.to_dict(), fh, indent=1)
        fh.write("\n")
