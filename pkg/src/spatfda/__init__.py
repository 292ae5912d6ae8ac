"""Mean functions, principal components and correlation tests for curves
observed at irregular locations on the sphere."""
from .corr_test import correlation_test
from .curvegrid import Curve, CurveSet, Grid, fourier_basis, read_curves_csv, write_curves_csv
from .errors import SpatFdaError
from .latscale import ScaleModel, descale, fit_scale
from .numkernel import RngStream
from .spatial_fpc import FpcSet, estimate_fpc_cm2, estimate_fpc_cm3, standard_fpc
from .spatial_mean import estimate_mean_m1, estimate_mean_m2, estimate_mean_m3, sample_mean
from .sphere import Location, LocationSet, distance_matrix, sample_locations
from .variogram import CovModel, empirical_variogram, fit_cov_model

__version__ = "0.1.0"
