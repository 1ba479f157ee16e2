from .rig import (LABEL_EYE, LABEL_JAW, LABEL_NAMES, LABEL_OTHER, LABEL_STATIC, RigConfig, SyntheticRig,
                  build_rig, eval_rig)
