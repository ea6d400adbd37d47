"""Exact-arithmetic calculator for differential graded operads and cooperads.

Modules:
  coeff        exact scalars, sparse matrices, Smith normal form, field elimination
  complexes    G-equivariant chain complexes, homology, norm/orbit machinery, Dold-Kan
  symseq       symmetric sequences, Day/levelwise tensors, composition products
  operads      dg-(co)operads, axiom checkers, free operad, bar/cobar/Koszul duality
  surjections  the surjections cooperad and its dual PD operad
  lie          shifted Lie operad, spectral partition Lie operad, partition L-infinity
  partition    partition posets, subdivided bar constructions, restricted algebras
  cli          the opcalc command line
"""

__version__ = "0.1.0"
