"""Published constants used as defaults and test fixtures."""

# Discrete-time 2-state models identified at 15-minute resolution.
OLDER_MODEL = dict(
    a11=0.8665, a12=0.0918, a21=0.0374, a22=0.9703,
    b=0.2996, d11=0.0230, d12=2.016e-4, d13=1.424e-4,
)
NEW_MODEL = dict(
    a11=0.6344, a12=0.2661, a21=0.1021, a22=0.9170,
    b=0.4716, d11=0.0405, d12=0.0028, d13=3.3686e-4,
)
SUPPLY_AIR_TEMP = 14.0  # degC
STEP_SECONDS = 900.0

# Fan curves, highest power first as printed: alpha3..alpha0, beta3..beta0, gamma1..gamma0.
FAN_ALPHA = (28.7, 630.9, -1458.0, 2588.2)  # ascending order, W per (kg/s)^n
FAN_BETA = (55.7634, 1.4521, -0.0151, 0.0032)  # ascending order, W per %^n
FAN_GAMMA = (0.0606, 0.0133)  # ascending order, kg/s per %^n
SPEED_MIN = 10.0  # %
SPEED_MAX = 90.0  # %

# PI gains per desired-power region, kW edges.
PI_REGIONS_KW = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5)
PI_KP = (0.004, 0.004, 0.004, 0.0045, 0.004)
PI_KI = (0.01, 0.0035, 0.003, 0.0025, 0.002)

# Scheduler flow limits are evaluated at these fan speeds; the MPC uses SPEED_MIN/MAX.
SCHED_SPEED_MIN = 20.0
SCHED_SPEED_MAX = 80.0

# Energy content of the regulation signal over 15 minutes.
WLIM_PERCENTILE = 97.5
WLIM_DEFAULT = 0.25

# EKF noise covariances (process noise read as diagonal).
EKF_Q_DIAG = (0.4, 0.4)
EKF_R = 0.1
