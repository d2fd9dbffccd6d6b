//! Shared fixtures for the pipeline benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use umbra_core::estimate::{Model, DEFAULT_HIDDEN};
use umbra_core::patches::keypoints_from_scene;
use umbra_core::scenekit::{render_sequence, FingerPose, SensorModel};
use umbra_core::{ChannelMode, CompositeFrame, HandKeypoints, LedSet, Scene};

/// One rendered composite with three fingers, plus tracker keypoints.
pub struct Workload {
    pub scene: Scene,
    pub frame: CompositeFrame,
    pub keypoints: HandKeypoints,
}

impl Workload {
    pub fn three_fingers() -> Self {
        let rig = Scene::default_rig();
        let poses = [
            FingerPose::over_ground(2, -60.0, 300.0, 0.0, -10.0, 30.0),
            FingerPose::over_ground(3, 0.0, 310.0, 6.0, 0.0, 30.0),
            FingerPose::over_ground(4, 60.0, 300.0, 20.0, 10.0, 30.0),
        ];
        let scene = rig.with_fingers(&poses).expect("valid poses");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sensor = SensorModel::with_noise(Default::default());
        let (frame, _) = render_sequence(&scene, &sensor, 0, 0, &mut rng);
        let keypoints = keypoints_from_scene(&scene, 1.5, &mut rng);
        Self {
            scene,
            frame,
            keypoints,
        }
    }
}

/// Randomly initialized model of the default size: inference cost does not
/// depend on the weights.
pub fn random_model(leds: LedSet, mode: ChannelMode) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Model::init(leds, mode, DEFAULT_HIDDEN, &mut rng)
}
