use dataview::data::Dataset;
use dataview::netcore::{self, Activation, DenseLayer, Mlp};
use dataview::shadow_tree::{DecisionTree, TreeParams};

const BLOB: &str = include_str!("golden/net.model");
const TREE: &str = include_str!("golden/tree.txt");
const RULES: &str = include_str!("golden/rules.txt");

fn fixed_net() -> Mlp {
    Mlp::from_layers(vec![
        DenseLayer {
            in_dim: 2,
            out_dim: 2,
            weights: vec![0.5, -1.25, 2.0, 0.1],
            bias: vec![0.0, -0.5],
            activation: Activation::Relu,
        },
        DenseLayer {
            in_dim: 2,
            out_dim: 2,
            weights: vec![1.0, -1.0, -3.0, 0.75],
            bias: vec![0.25, 0.0],
            activation: Activation::Softmax,
        },
    ])
    .unwrap()
}

fn fixed_data() -> Dataset {
    // Class 1 exactly when x > 2.5 and y > 1.5.
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for x in 0..5 {
        for y in 0..3 {
            rows.push(vec![x as f64, y as f64]);
            labels.push(usize::from(x > 2 && y > 1));
        }
    }
    Dataset::new(vec!["x".into(), "y".into()], vec!["no".into(), "yes".into()], rows, labels).unwrap()
}

#[test]
fn model_blob_matches_golden() {
    let net = fixed_net();
    let text = netcore::serialize_with_header(&net, &[("dataset", "golden".to_string())]);
    assert_eq!(text, BLOB);
    let back = netcore::deserialize(BLOB).unwrap();
    assert_eq!(back.net, net);
    assert_eq!(back.header_value("dataset"), Some("golden"));
}

#[test]
fn tree_render_matches_golden() {
    let tree = DecisionTree::fit(&fixed_data(), &TreeParams::default()).unwrap();
    assert_eq!(tree.render(), TREE);
    assert_eq!(tree.rules_text(), RULES);
}
