use super::format::{NodeDoc, NodeOp};
use super::GraphError;

/// A linear/add/pool node with its optional batch norm and its quant node.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedNode {
    pub op: NodeDoc,
    pub bn: Option<NodeDoc>,
    pub quant: NodeDoc,
}

fn fusion(node: &NodeDoc, message: impl Into<String>) -> GraphError {
    GraphError::Fusion { node: node.name.clone(), message: message.into() }
}

fn expect_single_input(node: &NodeDoc, from: &NodeDoc) -> Result<(), GraphError> {
    if node.inputs.len() != 1 || node.inputs[0] != from.output {
        return Err(fusion(node, format!("must consume exactly the output `{}` of `{}`", from.output, from.name)));
    }
    Ok(())
}

/// Groups raw nodes, given in producer order, into canonical layers.
pub fn fuse_nodes(nodes: &[NodeDoc]) -> Result<Vec<FusedNode>, GraphError> {
    let mut fused = Vec::new();
    let mut open: Option<(NodeDoc, Option<NodeDoc>)> = None;
    let mut last_was_quant = false;
    for node in nodes {
        match node.op {
            NodeOp::Bn => {
                match open.as_mut() {
                    None => return Err(fusion(node, "batch norm without preceding linear op")),
                    Some((_, Some(_))) => return Err(fusion(node, "layer already has a batch norm")),
                    Some((op, bn @ None)) => {
                        if !op.op.is_linear() {
                            return Err(fusion(node, format!("batch norm cannot follow `{}`", op.op.as_str())));
                        }
                        expect_single_input(node, op)?;
                        *bn = Some(node.clone());
                    }
                }
                last_was_quant = false;
            }
            NodeOp::Quant => {
                let Some((op, bn)) = open.take() else {
                    let msg = if last_was_quant { "two consecutive quant nodes" } else { "quant without preceding op" };
                    return Err(fusion(node, msg));
                };
                expect_single_input(node, bn.as_ref().unwrap_or(&op))?;
                fused.push(FusedNode { op, bn, quant: node.clone() });
                last_was_quant = true;
            }
            _ => {
                if let Some((op, _)) = &open {
                    return Err(fusion(op, "missing quant node before the next op"));
                }
                open = Some((node.clone(), None));
                last_was_quant = false;
            }
        }
    }
    if let Some((op, _)) = open {
        return Err(fusion(&op, "missing quant node"));
    }
    Ok(fused)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(name: &str, op: NodeOp, input: &str, output: &str) -> NodeDoc {
        NodeDoc::new(name, op, vec![input.to_string()], output)
    }

    #[test]
    fn conv_bn_quant_is_one_layer() {
        let nodes = [node("c", NodeOp::Conv, "x", "a"), node("b", NodeOp::Bn, "a", "b"), node("q", NodeOp::Quant, "b", "y")];
        let fused = fuse_nodes(&nodes).unwrap();
        assert_eq!(fused.len(), 1);
        assert!(fused[0].bn.is_some());
    }

    #[test]
    fn conv_quant_add_quant_is_two_layers() {
        let nodes = [
            node("c", NodeOp::Conv, "x", "a"),
            node("q", NodeOp::Quant, "a", "y"),
            NodeDoc::new("s", NodeOp::Add, vec!["x".into(), "y".into()], "s"),
            node("q2", NodeOp::Quant, "s", "z"),
        ];
        let fused = fuse_nodes(&nodes).unwrap();
        assert_eq!(fused.len(), 2);
        assert_eq!(fused[1].op.op, NodeOp::Add);
        assert!(fused.iter().all(|f| f.bn.is_none()));
    }

    #[test]
    fn orphan_bn_is_rejected() {
        let nodes = [node("b", NodeOp::Bn, "x", "b"), node("q", NodeOp::Quant, "b", "y")];
        let err = fuse_nodes(&nodes).unwrap_err();
        assert!(err.to_string().contains("without preceding linear op"), "{err}");
    }

    #[test]
    fn consecutive_quant_is_rejected() {
        let nodes = [node("c", NodeOp::Conv, "x", "a"), node("q", NodeOp::Quant, "a", "y"), node("q2", NodeOp::Quant, "y", "z")];
        let err = fuse_nodes(&nodes).unwrap_err();
        assert!(err.to_string().contains("two consecutive quant"), "{err}");
    }

    #[test]
    fn unterminated_layer_is_rejected() {
        let nodes = [node("c", NodeOp::Conv, "x", "a")];
        assert!(fuse_nodes(&nodes).is_err());
        let broken_chain = [node("c", NodeOp::Conv, "x", "a"), node("q", NodeOp::Quant, "other", "y")];
        assert!(fuse_nodes(&broken_chain).is_err());
    }
}
