"""Constant tables: object randomization ranges, success criteria, reward coefficients, ablations"""

# Object randomization, uniform ranges (lo, hi)
TRAIN_RANGES = {
    "mass": (6.0, 18.0),
    "inertia_axis_angle": (-20.0, 20.0),
    "com_volume_pct": (0.0, 50.0),
    "friction": (0.2, 0.4),
    "drag": (0.3, 0.7),
    "shapes": ["box", "cylinder"],
    "diameter": (0.5, 1.5),
    "width": (0.5, 1.5),
    "depth": (0.5, 1.5),
    "height": (0.35, 1.05),
}

TEST_RANGES = {
    "mass": (10.0, 20.0),
    "inertia_axis_angle": (-20.0, 20.0),
    "com_volume_pct": (0.0, 50.0),
    "friction": (0.15, 0.4),
    "drag": (0.0, 1.0),
    "shapes": ["box", "cylinder"],
    "diameter": (0.5, 1.5),
    "width": (0.5, 1.5),
    "depth": (0.5, 1.5),
    "height": (0.35, 1.05),
}

# (distance tolerance m, yaw tolerance deg), in table order
DEFAULT_CRITERIA = [
    (0.05, 5.0),
    (0.05, 10.0),
    (0.05, 15.0),
    (0.1, 10.0),
    (0.03, 5.0),
]

# Fixed-goal protocol: single criterion, initial object yaw offsets from the goal
ORIENTATION_PROTOCOL_CRITERIA = [(0.05, 10.0)]
ORIENTATION_PROTOCOL_YAWS_DEG = [45.0, 90.0, 180.0]

REWARD_COEFFICIENTS = {
    "k1": 1.0,
    "k2": 4.0,
    "k3": 1.0,
    "k4": 1.0,
    "k5": 2.0,
    "k6": 3.0,
    "k7": 1.0,
    "k8": 1.0,
}

ABLATIONS = {
    "none": {
        "name": "Full model",
        "description": "LSTM teacher/student encoders trained with regularized online adaptation; student encoder at deployment.",
        "eval_encoder": "student",
    },
    "no_adaptation": {
        "name": "w/o Adaptation",
        "description": "Policy sees only o_t and a_{t-1}; objects are still randomized.",
        "eval_encoder": "student",
    },
    "mlp_encoder": {
        "name": "MLP Encoder",
        "description": "Encoders replaced by MLPs over the flattened history window.",
        "eval_encoder": "student",
    },
    "no_8_key_points": {
        "name": "w/o 8 key points",
        "description": "Extrinsic reward uses the sum of position and orientation error norms instead of key-point distance.",
        "eval_encoder": "student",
    },
    "no_intrinsic_switch": {
        "name": "w/o Intrinsic switch",
        "description": "Intrinsic reward keeps updating near the goal.",
        "eval_encoder": "student",
    },
    "no_inertial_params": {
        "name": "w/o Inertial parameters",
        "description": "Mass, COM and inertia slots of the privileged vector are zeroed.",
        "eval_encoder": "student",
    },
    "expert": {
        "name": "Expert",
        "description": "Evaluated with the teacher encoder on true privileged history.",
        "eval_encoder": "expert",
    },
}


def get_ablation_description(ablation: str) -> str:
    """Get the human-readable description of an ablation"""
    return ABLATIONS.get(ablation, ABLATIONS["none"])["description"]


def get_ablation_name(ablation: str) -> str:
    """Get the display name of an ablation"""
    return ABLATIONS.get(ablation, ABLATIONS["none"])["name"]
