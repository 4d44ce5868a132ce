# coding: utf-8

# # Hard function families
#
# Two families drive the lower bounds: functions indexed by a binary code on a
# frequency cube, and functions indexed by well separated partitions of the
# coordinates.

# In[1]:

import itertools

import numpy as np

from compound_minimax import bounds as B


# ## Varshamov-Gilbert codes
#
# The greedy lexicode keeps a word whenever it is far enough from all kept words.

# In[2]:

for n in (8, 12, 16):
    code = B.varshamov_gilbert(n)
    print(n, len(code), "words, min distance", code.exhaustive_min_distance(), ">=", -(-n // 8))


# ## Cube family
#
# Pairwise squared distances equal gamma^2 times the Hamming distance.

# In[3]:

t, gamma = B.prop1_parameters(0.8, 1.0, 1)
fam = B.prop1_family(gamma, t, 1, 1.0, 1)
words = fam.code.words.astype(int)
a, b = fam.members[1], fam.members[2]
print((a.coefficients - b.coefficients).sq_norm(), gamma**2 * np.abs(words[1] - words[2]).sum())
print("average KL vs budget", B.prop1_kl_budget(fam, 0.8))


# ## Partition packings

# In[4]:

pk = B.greedy_packing(8, 2, 3, 1 / 8)
print(len(pk.elements), "partitions, log size", round(pk.log_size, 3),
      ">= guaranteed", round(B.lemma3_bound(8, 2, 3), 3))
rhos = [B.rho(p, q) for p, q in itertools.combinations(pk.elements, 2)]
print("smallest pairwise rho", min(rhos))


# In[5]:

for c in B.prop2_checks(6, 1, 3):
    print(f"{c.name:45s} {c.lhs:.3g} {c.rhs:.3g} {c.passed}")
