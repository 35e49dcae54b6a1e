import numpy as np

from invprob.families import GenericFamily


def in_lambda(fam, mapping):
    """The same family indexed by lambda = mapping(theta)."""
    space = fam.param_space[0]

    def logpdf(x, lam):
        theta = mapping.inverse(lam)
        inside = (theta > space.lo) & (theta < space.hi)
        with np.errstate(all="ignore"):
            return np.where(inside, fam.logpdf(x, np.where(inside, theta, 1.0)), -np.inf)

    return GenericFamily(
        logpdf,
        lambda x, lam: fam.cdf(x, mapping.inverse(lam)),
        lambda lam: fam.support(mapping.inverse(lam)),
        mapping.image(fam.param_space[0]),
        check=False,
    )
