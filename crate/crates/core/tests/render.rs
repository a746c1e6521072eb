use monsoon_core::render::{colormap, render_map, render_pair, scale_sidecar_path, GUTTER_COLOR, NAN_COLOR};
use monsoon_core::Error;
use ndarray::{array, Array2};

#[test]
fn identical_fields_give_identical_panels() {
    let t = array![[1.0f32, 2.0, f32::NAN], [4.0, 5.0, 6.0]];
    let (r, _) = render_pair(t.view(), t.view(), 2).unwrap();
    let panel_w = 3 * 2;
    assert_eq!(r.width, 2 * panel_w + 2);
    for y in 0..r.height {
        let row = &r.pixels[y * r.width..(y + 1) * r.width];
        assert_eq!(&row[..panel_w], &row[panel_w + 2..]);
        assert!(row[panel_w..panel_w + 2].iter().all(|p| *p == GUTTER_COLOR));
    }
}

#[test]
fn constant_field_is_uniform() {
    let t = Array2::from_elem((3, 4), 7.5f32);
    let (r, scale) = render_pair(t.view(), t.view(), 1).unwrap();
    assert_eq!(scale.min, scale.max);
    let first = r.pixel(0, 0);
    for y in 0..3 {
        for x in (0..4).chain(5..9) {
            assert_eq!(r.pixel(x, y), first);
        }
    }
}

#[test]
fn checkerboard_matches_direct_pixel_map() {
    let (h, w, px) = (4, 5, 3);
    let t = Array2::from_shape_fn((h, w), |(r, c)| ((r + c) % 2) as f32);
    let (raster, _) = render_pair(t.view(), t.view(), px).unwrap();
    let (lo, hi) = (colormap(0.0), colormap(1.0));
    for y in 0..h * px {
        for x in 0..w * px {
            let expect = if (y / px + x / px) % 2 == 0 { lo } else { hi };
            assert_eq!(raster.pixel(x, y), expect, "({x}, {y})");
        }
    }
}

#[test]
fn nan_cells_use_the_neutral_color_and_patterns_must_match() {
    let t = array![[f32::NAN, 1.0]];
    let (r, _) = render_pair(t.view(), t.view(), 1).unwrap();
    assert_eq!(r.pixel(0, 0), NAN_COLOR);
    let p = array![[0.5f32, 1.0]];
    assert!(matches!(render_pair(t.view(), p.view(), 1), Err(Error::Data(_))));
}

#[test]
fn predictions_beyond_the_truth_range_are_clamped() {
    let t = array![[0.0f32, 1.0]];
    let p = array![[-5.0f32, 9.0]];
    let (r, _) = render_pair(t.view(), p.view(), 1).unwrap();
    assert_eq!(r.pixel(3, 0), colormap(0.0));
    assert_eq!(r.pixel(4, 0), colormap(1.0));
}

#[test]
fn files_are_written_with_scale_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.ppm");
    let t = array![[0.0f32, 2.0]];
    render_map(t.view(), t.view(), &path, 4).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"P6\n20 4\n255\n"));
    assert_eq!(bytes.len(), "P6\n20 4\n255\n".len() + 20 * 4 * 3);
    let side = std::fs::read_to_string(scale_sidecar_path(&path)).unwrap();
    assert!(side.contains("min 0") && side.contains("max 2"));
}
