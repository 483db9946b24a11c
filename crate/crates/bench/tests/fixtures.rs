use ldn_bench::{colorized, masked_square, noise_image, observed_stack, sans_glyphs};

#[test]
fn noise_is_seeded_and_in_range() {
    let a = noise_image(8, 8, 3, 1);
    assert_eq!(a, noise_image(8, 8, 3, 1));
    assert_ne!(a, noise_image(8, 8, 3, 2));
    assert!(a.in_unit_range());
}

#[test]
fn masked_square_hides_the_center() {
    let m = masked_square(16, 0.5, 0).unwrap();
    assert_eq!(m.mask.data().iter().filter(|&&b| b).count(), 64);
}

#[test]
fn stack_marks_observed_slots() {
    let font = sans_glyphs(16).unwrap();
    let s = observed_stack(&font, 4).unwrap();
    assert_eq!(s.observed_count(), 4);
    assert_eq!(s.size, 16);
}

#[test]
fn colorized_exemplars_carry_rgb() {
    let font = colorized(&sans_glyphs(16).unwrap(), [0.8, 0.2, 0.1]);
    assert!(observed_stack(&font, 4).unwrap().rgb.is_some());
}
