//! Box encodings, IoU and GIoU.
//!
//! cargo run --example box_geometry

use transtrack::geometry::{convert, giou, iou, AnyBox, BBox, Encoding, ImageSize};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a = BBox::try_new(10.0, 10.0, 40.0, 80.0)?;
    let pairs = [
        ("same box", a),
        ("shifted by half a width", BBox::new(30.0, 10.0, 40.0, 80.0)),
        ("nested", BBox::new(20.0, 30.0, 20.0, 20.0)),
        ("disjoint", BBox::new(100.0, 10.0, 40.0, 80.0)),
        ("far away", BBox::new(400.0, 300.0, 40.0, 80.0)),
    ];
    println!("{:<26} {:>7} {:>7}", "pair", "iou", "giou");
    for (name, b) in pairs {
        println!("{name:<26} {:>7.4} {:>7.4}", iou(&a, &b), giou(&a, &b));
    }

    // the network predicts normalized center boxes
    let image = ImageSize::new(320.0, 240.0)?;
    let center = a.to_center(image);
    println!("\n{a:?}\n  -> {center:?}\n  -> {:?}", center.to_pixels(image));
    let back = convert(AnyBox::Center(center), Encoding::PixelCorner, image.width, image.height)?;
    println!("convert: {back:?}");
    Ok(())
}
