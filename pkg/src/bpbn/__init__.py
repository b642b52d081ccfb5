"""bpbn: bit-plane input binarization engine for binary neural networks.

Packed {-1,+1} tensors with XNOR-popcount kernels, the bit-plane input
block (rearrange -> binary depthwise conv -> shift re-weight -> fuse),
comparison input encoders (DBID, BIL, thermometer), a declarative model
container with production and float-reference execution paths, and an
analytical first-layer MAC/weight cost model.
"""

from .errors import (
    BpbnError,
    DigestError,
    ImageFormatError,
    MissingBlobError,
    ModelFormatError,
    ModelVersionError,
    PackingError,
    RangeOverflowError,
    ShapeError,
)
from .tensors import (
    PackedBitTensor,
    as_accum_tensor,
    as_byte_tensor,
    pack_bipolar,
    popcount_xor_dot,
    read_tensor,
    read_tensor_file,
    unpack_bipolar,
    write_tensor,
    write_tensor_file,
)
from .binops import (
    BinaryKernel,
    FixedAffine,
    FloatAffine,
    affine_fixed,
    affine_fixed_per_map,
    binary_conv2d,
    binary_dense,
    fold_bn_to_threshold,
    int8_conv2d,
    maxpool2,
    sign_to_bits,
    threshold_to_bits,
)
from .encoders import (
    BitPlaneStack,
    bit_rearrange,
    encode_bil,
    encode_dbid,
    encode_thermometer,
    thermometer_thresholds,
)
from .bpie import BpieConfig, BpieWeights, bpie_forward, feature_extract, fuse, reweight
from .model import ModelBuilder, ModelManifest, load_model, save_model, validate_manifest
from .result import InferenceResult
from .runtime import get_thread_count, run_inference
from .reference import reference_forward
from .costmodel import FirstLayerCostInputs, CostReport, macs_for, report

__version__ = "0.1.0"
