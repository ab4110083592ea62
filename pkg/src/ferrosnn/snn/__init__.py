from .lif import LifParams, LifState, NeuronConfig, SurrogateParams, lif_step, surrogate_grad
from .network import (
    SYNAPTIC_LAYERS,
    ForwardRecord,
    NetworkSpec,
    NetworkState,
    backward,
    forward,
    loss_and_grads,
    predict,
    temporal_aggregate,
    trial_gradients,
)
