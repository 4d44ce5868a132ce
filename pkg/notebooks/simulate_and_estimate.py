# coding: utf-8

# # Simulate a compound model and estimate it
#
# A function on [0,1]^4 made of a constant plus two atoms, one on each of the
# first two coordinates. We observe its Fourier coefficients in white noise and
# aggregate projection estimators over every sparsity pattern.

# In[1]:

import numpy as np

from compound_minimax import CandidateSpace, SobolevBall, compose, exact_aggregate, make_structure, observe
from compound_minimax.basis import IndexBox
from compound_minimax.compound import sample_sobolev_atom
from compound_minimax.risk import mise


# In[2]:

beta, L, cutoff, eps = 2.0, 1.0, 5, 0.05
structure = make_structure(4, 1, [(1,), (2,)])
rng = np.random.default_rng(0)
atoms = [sample_sobolev_atom(SobolevBall(4, V, beta, L), cutoff, rng, decay=beta + 0.5)
         for V in structure.supports]
f = compose(0.4, structure, atoms, (beta, L))
print(len(f.coefficients), "nonzero coefficients, energy", round(f.coefficients.sq_norm(), 4))


# Only indices with a single nonzero entry can be used by candidates with s = 1,
# so the observation keeps just those.

# In[3]:

obs = observe(f.coefficients, eps, IndexBox(4, cutoff), seed=1, max_support=1)
space = CandidateSpace(4, 1, cutoff)
ensemble, estimate = exact_aggregate(obs, space.candidates())
print(space.size(), "candidates")


# In[4]:

order = np.argsort(ensemble.weights)[::-1][:5]
for i in order:
    print(f"{ensemble.weights[i]:.3f}  {ensemble.candidates[i].label()}")


# The leading candidates keep coordinates 1 and 2. Rerun with eps = 0.15 and the
# constant wins instead: the price 4 eps^2 log(1/prior) of a structure is then
# larger than the energy of these atoms.

# In[5]:

print("aggregate MISE", round(mise(estimate, f.coefficients), 4))
print("noise level eps^2 per kept coefficient", eps**2)
