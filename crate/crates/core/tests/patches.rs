//! Patch normalization against paired renders of the same physical scene.

use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use umbra_core::patches::{extract_patch, keypoints_from_scene, patch_transform, FingerPatch};
use umbra_core::scenekit::{render_subframe, FingerPose, LightSet, PinholeCamera};
use umbra_core::suppress::normalize;
use umbra_core::{ChannelMode, LedSet, Scene, SuppressedFrame};

const FINGER: u8 = 3;

fn scene() -> Scene {
    Scene::default_rig()
        .with_fingers(&[FingerPose::over_ground(FINGER, 0.0, 280.0, 8.0, 15.0, 30.0)])
        .unwrap()
}

fn view(scene: &Scene, eye: Point3<f64>, target: Point3<f64>, up: Vector3<f64>) -> Scene {
    let c = &scene.camera;
    let mut out = scene.clone();
    out.camera =
        PinholeCamera::look_at(eye, target, up, [c.fx, c.fy, c.cx, c.cy], c.width, c.height)
            .unwrap();
    out
}

fn led3_patch(scene: &Scene) -> (FingerPatch, f64) {
    let img = normalize(&render_subframe(scene, LightSet::led(3)));
    let frame = SuppressedFrame {
        frame_index: 0,
        base_timestamp_us: 0,
        leds: LedSet::new(&[3]).unwrap(),
        mode: ChannelMode::MultiChannel,
        channels: vec![img],
    };
    let kp = keypoints_from_scene(scene, 0.0, &mut ChaCha8Rng::seed_from_u64(0));
    let t = patch_transform(&kp, FINGER).unwrap();
    (extract_patch(&frame, &t, FINGER), t.scale)
}

fn mean_abs_diff(a: &FingerPatch, b: &FingerPatch) -> f64 {
    let n = a.pixels.len() as f64;
    a.pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x - y).abs() as f64)
        .sum::<f64>()
        / n
}

#[test]
fn camera_roll_leaves_patch_unchanged() {
    let base = scene();
    let eye = base.camera.center();
    let target = Point3::new(0.0, 280.0, 0.0);
    let upright = view(&base, eye, target, Vector3::z());
    let rolled = view(&base, eye, target, Vector3::x());
    let (a, sa) = led3_patch(&upright);
    let (b, sb) = led3_patch(&rolled);
    assert!((sa - sb).abs() < 1e-6 * sa);
    let d = mean_abs_diff(&a, &b);
    assert!(d <= 0.02, "rolled view differs by {d}");
}

#[test]
fn doubled_distance_keeps_patch_scale() {
    let base = scene();
    // Double the camera distance to the middle of the wrist–MCP segment.
    let kp = &base.fingers[0].keypoints;
    let hand = Point3::from((kp.wrist.coords + kp.mcp.coords) * 0.5);
    let eye = base.camera.center();
    let near = view(&base, eye, hand, Vector3::z());
    let far = view(&base, hand + (eye - hand) * 2.0, hand, Vector3::z());
    let (_, sa) = led3_patch(&near);
    let (_, sb) = led3_patch(&far);
    // The image of the hand halves, so the normalizing scale doubles.
    let ratio = sb / sa;
    assert!((ratio - 2.0).abs() < 0.05, "scale ratio {ratio}");
}
