"""Published full-scale results, kept for side-by-side comparison only.

They come from proprietary market data and full-length training, so nothing
in this package is expected to reproduce them. Percentages are fractions.
"""

# model -> (R^2, GMV vol, GMV+ vol); None where not reported
MODEL_TABLE = {
    "Market": (None, 0.184, 0.184),
    "FRM": (0.298, 0.126, 0.129),
    "SRM": (0.301, 0.186, 0.135),
    "SRM (x2)": (0.307, 0.165, 0.162),
    "DRM": (0.304, 0.123, 0.129),
    "DRM (x2)": (0.317, 0.116, 0.123),
}

# factor id -> (mean |t|, share of |t| > 2, VIF, lag-1 autocorrelation)
FACTOR_TABLE = {
    0: (4.878, 0.729, 0.984, 0.995),
    1: (3.559, 0.659, 1.301, 0.995),
    2: (2.748, 0.550, 1.180, 0.997),
    3: (2.173, 0.459, 1.277, 0.998),
    4: (3.244, 0.590, 1.309, 0.997),
    5: (2.831, 0.560, 1.163, 0.966),
    6: (3.461, 0.647, 1.007, 0.994),
    7: (2.697, 0.568, 1.211, 0.966),
    8: (3.247, 0.603, 1.293, 0.990),
    9: (2.699, 0.556, 1.104, 0.985),
}

# number of factors -> (R^2 with graph attention, R^2 without)
GAT_TABLE = {
    10: (0.304, 0.303),
    12: (0.306, 0.305),
    14: (0.308, 0.309),
    16: (0.311, 0.311),
    18: (0.314, 0.313),
    20: (0.317, 0.315),
}
