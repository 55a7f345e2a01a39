"""Numerical checks of the three structural claims.

1. Rotated-coordinate marginal: sqrt(d) times a coordinate of a rotated
   unit vector is close to N(0,1) in Kolmogorov distance at d=128.
2. Reconstruction-error envelope: the (1-delta) quantile of the
   rotate-quantize-unrotate error stays under
   sqrt(D_b) + sqrt(8 log(2/delta) / (d-2)) - numerically loose at this
   dimension, but data-independent.
3. IVF amplification: wrapping the quantizer around residuals shrinks
   squared score-estimation error by 2(1 - mean assigned IP), measured
   directly against a flat twin on clustered data.
"""

from ivftq import (
    IndexConfig,
    IvfTqIndex,
    design_quantizer,
    generate_rotation,
    verify_amplification,
    verify_marginal,
    verify_theorem1,
)
from ivftq.data_io import make_synthetic_clusters

rot = generate_rotation(128, seed=42)

marginal = verify_marginal(rot, 128, n_trials=10_000, seed=1)
print(f"1. Gaussian marginal: KS distance = {marginal['ks_statistic']:.4f} "
      f"over {marginal['n_samples']} samples (want < 0.05)")

q = design_quantizer(4, 128)
envelope = verify_theorem1(q, rot, n_trials=1000, delta=0.01, seed=0)
print(f"\n2. Error envelope at d=128, b=4, delta=0.01:")
print(f"   empirical 99th-percentile error  {envelope['empirical_quantile']:.4f}")
print(f"   rate floor sqrt(D_4)             {envelope['rate_term']:.4f}")
print(f"   bound (floor + deviation term)   {envelope['bound_value']:.4f}")
print(f"   holds: {envelope['holds']} (the deviation term dominates at this d; "
      f"the value of the bound is that it depends only on bits/dim/delta)")

rows = make_synthetic_clusters(20_200, 64, 8, spread=0.08, seed=5)
data, queries = rows[:20_000], rows[20_000:]
index = IvfTqIndex.build(IndexConfig(dim=64, bits=4, n_lists=8, kmeans_seed=3), data)
amp = verify_amplification(index, data, queries)
print(f"\n3. IVF amplification on 8-cluster data (n=20K):")
print(f"   mean assigned IP        {amp['mean_assigned_ip']:.3f}")
print(f"   predicted error ratio   {amp['predicted_ratio']:.3f}  (= 2(1 - mean IP))")
print(f"   measured error ratio    {amp['measured_ratio']:.3f}")
print(f"   agreement within 25%:   {abs(amp['relative_gap']) <= 0.25}")
