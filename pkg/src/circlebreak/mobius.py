"""Fractional-linear (Mobius) transformations with exact coefficient algebra.

A transform is stored as the quadruple (a, b, c, e) meaning

    M(x) = (a*x + b) / (c*x + e).

Everything here works uniformly for python floats, numpy arrays and mpmath
mpf values because only +, -, *, / and comparisons are used. Composition and
inversion act on coefficients, so long branch compositions (return maps,
renormalization) stay exact instead of accumulating pointwise error.

The increment form `delta_apply` evaluates M(x + h) - M(x) without cancelling
digits:

    M(x + h) - M(x) = h * det / ((c*(x+h) + e) * (c*x + e)),  det = a*e - b*c.

This is what keeps noise-perturbed orbits meaningful at sigma far below the
spacing of representable numbers around M(x).
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class Mobius:
    a: float
    b: float
    c: float
    e: float

    @property
    def det(self):
        return self.a * self.e - self.b * self.c

    def __call__(self, x):
        return (self.a * x + self.b) / (self.c * x + self.e)

    def deriv(self, x):
        d = self.c * x + self.e
        return self.det / (d * d)

    def second_deriv(self, x):
        d = self.c * x + self.e
        return -2.0 * self.c * self.det / (d * d * d)

    def delta_apply(self, x, h):
        """Exact M(x + h) - M(x), cancellation-free."""
        return h * self.det / ((self.c * (x + h) + self.e) * (self.c * x + self.e))

    def compose(self, other):
        """Coefficients of self o other (apply `other` first)."""
        return Mobius(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.e,
            self.c * other.a + self.e * other.c,
            self.c * other.b + self.e * other.e,
        )

    def inverse(self):
        return Mobius(self.e, -self.b, -self.c, self.a)

    def normalized(self):
        """Scale coefficients so max |coeff| = 1 (same transform)."""
        m = max(abs(self.a), abs(self.b), abs(self.c), abs(self.e))
        return Mobius(self.a / m, self.b / m, self.c / m, self.e / m)

    def map_coeffs(self, fn):
        """New Mobius with fn applied to each coefficient (e.g. mpf, float)."""
        return Mobius(fn(self.a), fn(self.b), fn(self.c), fn(self.e))


def affine(slope, intercept):
    """The affine map x -> slope*x + intercept as a Mobius quadruple."""
    one = slope / slope  # stays in the operand's arithmetic (float or mpf)
    return Mobius(slope, intercept, 0 * slope, one)


IDENTITY = Mobius(1.0, 0.0, 0.0, 1.0)


def compose_chain(transforms):
    """Compose a sequence [M1, M2, ..., Mn] into Mn o ... o M2 o M1.

    The chain is applied left to right: the first listed transform acts first.
    Coefficients are renormalized along the way to keep magnitudes tame.
    """
    out = None
    for t in transforms:
        out = t if out is None else t.compose(out)
        out = out.normalized() if isinstance(out.a, float) else out
    if out is None:
        raise ValueError("empty chain")
    return out
