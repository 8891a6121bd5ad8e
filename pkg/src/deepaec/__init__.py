"""deepaec: end-to-end joint echo cancellation, noise suppression and
speech enhancement with pseudocomplex dilated dense networks and dual
complex time-frequency masks."""

__version__ = "0.1.0"

from importlib import resources

from .complexnn import ComplexTensor, count_params
from .dsp import ComplexSpectrogram, istft, read_wav, sqrt_hann, stft, write_wav
from .enhancement import (MaskPair, apply_dual_mask, apply_single_mask, enhance,
                          oracle_echo_mask, stack_inputs)
from .errors import (DataError, DeepAecError, InvalidArgumentError, NumericalError,
                     UnsupportedFormatError)
from .network import MaskNet, NetConfig, load_config, receptive_field, save_config
from .objectives import (LossWeights, composite_loss, neg_sd_sdr, perceptual_loss,
                         sd_sdr, sdr, si_sdr)
from .scenes import (SceneQuad, ScenePlan, augment_scale, augment_shift,
                     distortion_f, load_scene_dir, make_scene, save_scene_dir,
                     synth_source)
from .tensor import ConvSpec, Tensor, batch_norm, concat_channels, conv2d, grad_check
from .training import (TrainPlan, TrainState, adam_step, evaluate, load_model,
                       lr_schedule, save_model, train)


def packaged_config(name):
    """Load one of the configs shipped with the package (e.g. 'default_dual')."""
    from .network import parse_config

    ref = resources.files("deepaec").joinpath("configs", f"{name}.cfg")
    return parse_config(ref.read_text())
