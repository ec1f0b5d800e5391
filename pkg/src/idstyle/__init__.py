"""Identity-preserving stylization toolkit.

Training-free machinery for keeping people recognizable through
stylization: a content-guided deterministic (DDIM) sampling loop with
per-step noise refinement, an invertible face-tile mosaic pipeline, a
multi-image style reference builder, and a face-area-categorized
identity evaluation harness.  Analytic toy denoisers and codecs make
the whole thing runnable and testable at desk scale.
"""
from .config import PipelineConfig, load_config, parse_config, write_config
from .denoise import (ExternalCommandPredictor, GaussianPriorPredictor,
                      NoisePredictor, PointMassPredictor, StylePullPredictor,
                      read_latent, write_latent)
from .errors import (DegenerateInputError, DetectorError, FormatError,
                     NumericalDivergenceError, ParameterError, PredictorError,
                     ShapeError)
from .evalkit import (Embedder, EvalRecord, EvalReport, ToyEmbedder,
                      build_report, collect_records, cosine_similarity, embed,
                      face_area_category, load_eval_manifest, report_csv,
                      report_text, run_eval)
from .guidance import (GuidanceConfig, Latent, content_loss,
                       content_loss_grad, ddim_step, estimate_x0,
                       refine_noise, residual_contraction_factor)
from .imageio import Image, crop, load_image, resize, save_image
from .latentcodec import CodecConfig, decode, encode
from .mosaic import (BicubicUpscaler, ConstantColorDetector,
                     DegradingStylizer, FaceBox, FaceDetector,
                     IdentityStylizer, ManifestDetector, MosaicLayout, Rect,
                     StyleMosaicSpec, Stylizer, TileSlot, Upscaler,
                     build_content_mosaic, build_style_mosaic, detect_faces,
                     enhance_face, extract_stylized_faces, letterbox_geometry,
                     load_face_manifest, load_layout, reinsert_faces,
                     save_face_manifest, save_layout)
from .sampler import InversionConfig, SampleTrace, invert, sample
from .schedule import (NoiseSchedule, TimestepPlan, build_schedule,
                       default_schedule, plan_timesteps, schedule_csv)

__version__ = "0.1.0"
