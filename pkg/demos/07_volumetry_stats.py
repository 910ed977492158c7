"""
Group volumetry: ROI volumes, TIV normalization, rank tests
===========================================================

ROI volume is voxel count times voxel volume; normalizing by total
intracranial volume makes subjects comparable. Group differences use the
Mann-Whitney U test (exact for small tie-free samples) with a Bonferroni-
corrected significance threshold.
"""
import numpy as np

from voxtk import bonferroni, mann_whitney_u, normalize, roi_volume
from voxtk.labelprep import label_name
from voxtk.volume import LabelVolume

rng = np.random.default_rng(11)
ROI = 9  # a subcortical structure

def cohort(n, mean_side, label=ROI):
    """Subjects whose ROI is a cube with noisy side length."""
    vols = []
    for _ in range(n):
        side = max(2, int(round(rng.normal(mean_side, 1.0))))
        data = np.zeros((32, 32, 32), dtype=np.int32)
        data[:side, :side, :side] = label
        vols.append(LabelVolume(data, spacing=(0.75, 0.75, 0.75)))
    return vols

controls = cohort(21, mean_side=8.0)
patients = cohort(24, mean_side=6.5)   # atrophied on average

tivs = rng.normal(1.45e6, 1e5, size=len(controls) + len(patients))
norm_controls = [normalize(roi_volume(v, ROI), t)
                 for v, t in zip(controls, tivs)]
norm_patients = [normalize(roi_volume(v, ROI), t)
                 for v, t in zip(patients, tivs[len(controls):])]

print(f"ROI: {label_name(ROI)}")
print(f"controls: n={len(norm_controls)}, "
      f"median normalized volume {np.median(norm_controls):.2e}")
print(f"patients: n={len(norm_patients)}, "
      f"median normalized volume {np.median(norm_patients):.2e}")

# three ROIs x two methods worth of tests -> corrected threshold
m_tests = 3 * 2
threshold = bonferroni(0.05, m_tests)
print(f"\nBonferroni threshold for {m_tests} tests: {threshold:.6f}")

result = mann_whitney_u(norm_controls, norm_patients, alpha=0.05,
                        m_tests=m_tests)
print(f"U = {result.u:.1f}, p = {result.p_value:.2e} ({result.method} method)")
print("significant after correction:", result.significant)

# small tie-free samples switch to the exact enumeration automatically
small = mann_whitney_u([1.0, 2.0, 3.0], [4.0, 5.0, 6.0])
print(f"\nsmall-sample test: U = {small.u:.0f}, exact p = {small.p_value:.3f}")
