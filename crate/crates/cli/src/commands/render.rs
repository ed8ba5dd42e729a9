use anyhow::Result;

use eot_core::classifier::color_shape_image;
use eot_core::eval::write_montage;
use eot_core::imageio::read_image;
use eot_core::renderer3d::Dist3D;
use eot_core::rng;
use eot_core::transform::Transform;

use super::attack::montage_tiles;
use super::{load, mesh};
use crate::artifacts::{ensure_dir, write_image_pair};
use crate::config::RunConfig;

/// Renders the texture under sampled poses; with a model, also writes a
/// captioned montage.
pub fn run(cfg: &RunConfig) -> Result<()> {
    let texture = match &cfg.render.texture {
        Some(p) => read_image(p)?,
        None => color_shape_image(0, &mut rng::stream(cfg.seed, "cli.texture")),
    };
    let s = texture.shape();
    let model = cfg.model.as_ref().map(|_| load(cfg)).transpose()?;
    let [h, w] = match (cfg.render.size, &model) {
        (Some(s), _) => s,
        (None, Some(m)) => {
            let [h, w, _] = m.input_shape();
            [h, w]
        }
        (None, None) => [64, 64],
    };
    let physical = cfg.physical.as_ref().map(|p| p.to_config()).transpose()?;
    let dist = Dist3D::new(
        mesh(cfg)?,
        cfg.pose3d.to_config()?,
        physical,
        (s[0], s[1]),
        (h, w),
    )?;
    let mut r = rng::stream(cfg.seed, "cli.render");
    let views: Vec<_> = (0..cfg.render.poses)
        .map(|_| eot_core::transform::TransformSampler::<f64>::sample(&dist, &mut r))
        .collect();
    let out = ensure_dir(&cfg.out)?;
    for (i, v) in views.iter().enumerate() {
        write_image_pair(&v.apply(&texture)?, &out, &format!("render{i:03}"))?;
    }
    if let Some(model) = model {
        let model = model.compile()?;
        let tiles = montage_tiles(&model, &texture, usize::MAX, &views, views.len())?;
        write_montage(&tiles, 4, 2, out.join("montage.png"))?;
    }
    println!("wrote {} renderings to {}", views.len(), out.display());
    Ok(())
}
