"""lanesafe: lane-change prediction, planning and closed-loop simulation.

The stack has four layers, importable piecemeal:

* ``lanesafe.lstm`` / ``lanesafe.baselines`` - trajectory predictors
* ``lanesafe.planner`` - cubic lane-change curve generation
* ``lanesafe.safety`` - safe-distance model and risk index
* ``lanesafe.mpc`` / ``lanesafe.simulation`` - control and closed-loop runs

``lanesafe.data`` generates/loads trajectory datasets and ``lanesafe.modelio``
persists trained models.
"""

from .baselines import (ConstantVelocityModel, FeedforwardModel,
                        FeedforwardPredictor, predict_constant_velocity,
                        predict_feedforward, train_feedforward)
from .features import FeatureScaler, FeatureWindow, WindowAnchor, feature_vector
from .lstm import (IntentionDistribution, LstmModel, LstmParams, LstmState,
                   TrainConfig, cell_step, classify_intention, forward,
                   init_params, loss_and_gradients, predict_trajectory, train,
                   train_intention)
from .modelio import load_model, load_predictor, save_model
from .mpc import (ControlInput, MpcConfig, ObstaclePrediction, plan_control,
                  rollout)
from .planner import (CubicCurve, LaneChangeStep, check_comfort, eval_curvature,
                      eval_curve, eval_heading, fit_cubic, sample_trajectory)
from .safety import (GippsParams, RiskSample, gap, is_lane_change_safe, rai,
                     safe_distance, scene_rai)
from .simulation import (ScenarioSpec, SimLog, detect_collision, run_scenario,
                         scenario_active_lane_change,
                         scenario_emergency_braking, step, summarize)
from .vehicle import Trajectory, VehicleState

__version__ = "0.1.0"
