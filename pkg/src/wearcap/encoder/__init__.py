from .model import (
    EncoderConfig,
    EncoderConfigError,
    ModalityConfig,
    ModalityEncoder,
    SensorEncoder,
    WindowTokenizer,
    alignment_loss,
    fuse_modalities,
    n_tokens,
    positional_encoding,
    tokenize_windows,
)
from .teacher import (
    TeacherError,
    TeacherProvider,
    read_teacher_file,
    read_teacher_json,
    synth_teacher,
    write_teacher_file,
)
from .train import (
    DivergenceError,
    EncoderRun,
    TrainSettings,
    encode_segments,
    encoder_checkpoint,
    encoder_from_checkpoint,
    mean_loss,
    segment_windows,
    stack_clips,
    train_encoder,
)
