//! Per-operator shape and dtype inference, shared by validation, the
//! interpreter and the multiplication counters.

use crate::graph::{broadcast_shapes, DType, Graph, GraphError, Node, OpKind};

pub type ShapeAndType = (Vec<usize>, DType);

fn shape_err(node: &Node, detail: impl Into<String>) -> GraphError {
    GraphError::ShapeMismatch {
        node: node.id,
        detail: detail.into(),
    }
}

fn dtype_err(node: &Node, detail: impl Into<String>) -> GraphError {
    GraphError::DTypeMismatch {
        node: node.id,
        detail: detail.into(),
    }
}

fn in_shape<'a>(g: &'a Graph, node: &Node, idx: usize) -> Result<&'a [usize], GraphError> {
    let t = node
        .inputs
        .get(idx)
        .ok_or_else(|| shape_err(node, format!("missing input {idx}")))?;
    Ok(&g.tensor(*t).shape)
}

fn in_dtype(g: &Graph, node: &Node, idx: usize) -> Result<DType, GraphError> {
    let t = node
        .inputs
        .get(idx)
        .ok_or_else(|| shape_err(node, format!("missing input {idx}")))?;
    Ok(g.tensor(*t).dtype)
}

fn declared_dtype(g: &Graph, node: &Node, out_idx: usize) -> DType {
    node.outputs
        .get(out_idx)
        .map(|t| g.tensor(*t).dtype)
        .unwrap_or(DType::F32)
}

fn ints(node: &Node, key: &str) -> Result<Vec<i64>, GraphError> {
    node.ints_attr(key)
        .map(|v| v.to_vec())
        .ok_or_else(|| shape_err(node, format!("missing attr {key}")))
}

/// Window extent for one spatial dimension.
pub fn conv_out_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    same_padding: bool,
) -> Option<usize> {
    if stride == 0 {
        return None;
    }
    if same_padding {
        Some(input.div_ceil(stride))
    } else if input >= kernel {
        Some((input - kernel) / stride + 1)
    } else {
        None
    }
}

pub fn conv_attrs(node: &Node) -> (usize, usize, bool) {
    let strides = node.ints_attr("strides").unwrap_or(&[1, 1]);
    let sh = *strides.first().unwrap_or(&1) as usize;
    let sw = *strides.get(1).unwrap_or(&1) as usize;
    let same = node.str_attr("padding").unwrap_or("VALID") == "SAME";
    (sh.max(1), sw.max(1), same)
}

/// Infers output shapes and dtypes for a node whose inputs already have
/// concrete shapes. Returns one entry per data output.
pub fn infer_node(g: &Graph, node: &Node) -> Result<Vec<ShapeAndType>, GraphError> {
    use OpKind::*;
    let out = match node.op {
        NoOp => vec![],
        Identity | StopGradient | Relu | Softmax | Neg | Exp | Sin | Reverse | FakeQuant => {
            let s = in_shape(g, node, 0)?.to_vec();
            let d = in_dtype(g, node, 0)?;
            if matches!(node.op, Exp | Sin | Softmax) && !d.is_float() {
                return Err(dtype_err(node, format!("{} requires float input", node.op.name())));
            }
            vec![(s, d)]
        }
        Not => {
            let s = in_shape(g, node, 0)?.to_vec();
            if in_dtype(g, node, 0)? != DType::Bool {
                return Err(dtype_err(node, "Not requires BOOL input"));
            }
            vec![(s, DType::Bool)]
        }
        Shuffle => {
            let s = in_shape(g, node, 0)?.to_vec();
            let perm = ints(node, "perm")?;
            let n = *s.first().unwrap_or(&1);
            if perm.len() != n {
                return Err(shape_err(node, "Shuffle perm length must equal leading extent"));
            }
            vec![(s, in_dtype(g, node, 0)?)]
        }
        Add | Sub | Mul | Div => {
            let a = in_shape(g, node, 0)?;
            let b = in_shape(g, node, 1)?;
            let da = in_dtype(g, node, 0)?;
            let db = in_dtype(g, node, 1)?;
            if da != db {
                return Err(dtype_err(node, format!("operands {da:?} vs {db:?}")));
            }
            let s = broadcast_shapes(a, b)
                .ok_or_else(|| shape_err(node, format!("no broadcast relation {a:?} vs {b:?}")))?;
            vec![(s, da)]
        }
        Greater | LessEqual => {
            let a = in_shape(g, node, 0)?;
            let b = in_shape(g, node, 1)?;
            let s = broadcast_shapes(a, b)
                .ok_or_else(|| shape_err(node, format!("no broadcast relation {a:?} vs {b:?}")))?;
            vec![(s, DType::Bool)]
        }
        AddN => {
            if node.inputs.is_empty() {
                return Err(shape_err(node, "AddN requires at least one input"));
            }
            let d = in_dtype(g, node, 0)?;
            let mut s = in_shape(g, node, 0)?.to_vec();
            for i in 1..node.inputs.len() {
                if in_dtype(g, node, i)? != d {
                    return Err(dtype_err(node, "AddN operand dtypes differ"));
                }
                let b = in_shape(g, node, i)?;
                s = broadcast_shapes(&s, b)
                    .ok_or_else(|| shape_err(node, "AddN operands not broadcastable"))?;
            }
            vec![(s, d)]
        }
        Concat => {
            let axis = node.int_attr("axis").unwrap_or(0) as usize;
            let mut s = in_shape(g, node, 0)?.to_vec();
            if axis >= s.len() {
                return Err(shape_err(node, "Concat axis out of range"));
            }
            let d = in_dtype(g, node, 0)?;
            for i in 1..node.inputs.len() {
                let b = in_shape(g, node, i)?;
                if b.len() != s.len()
                    || b.iter().enumerate().any(|(j, &e)| j != axis && e != s[j])
                {
                    return Err(shape_err(node, "Concat operand shapes incompatible"));
                }
                s[axis] += b[axis];
            }
            vec![(s, d)]
        }
        Split => {
            let axis = node.int_attr("axis").unwrap_or(0) as usize;
            let s = in_shape(g, node, 0)?.to_vec();
            let d = in_dtype(g, node, 0)?;
            let parts = node.outputs.len();
            if axis >= s.len() || parts == 0 || s[axis] % parts != 0 {
                return Err(shape_err(node, "Split extent not divisible by output count"));
            }
            let mut piece = s.clone();
            piece[axis] = s[axis] / parts;
            vec![(piece, d); parts]
        }
        Transpose => {
            let s = in_shape(g, node, 0)?;
            let perm = ints(node, "perm")?;
            if perm.len() != s.len() {
                return Err(shape_err(node, "Transpose perm rank mismatch"));
            }
            let mut out = vec![0; s.len()];
            for (i, &p) in perm.iter().enumerate() {
                let p = p as usize;
                if p >= s.len() {
                    return Err(shape_err(node, "Transpose perm index out of range"));
                }
                out[i] = s[p];
            }
            vec![(out, in_dtype(g, node, 0)?)]
        }
        Reshape => {
            let s = in_shape(g, node, 0)?;
            let total: usize = s.iter().product();
            let new = ints(node, "new_shape")?;
            let mut out = Vec::with_capacity(new.len());
            let mut infer_at = None;
            let mut known = 1usize;
            for (i, &e) in new.iter().enumerate() {
                if e == -1 {
                    if infer_at.is_some() {
                        return Err(shape_err(node, "Reshape with multiple -1 extents"));
                    }
                    infer_at = Some(i);
                    out.push(0);
                } else {
                    out.push(e as usize);
                    known *= e as usize;
                }
            }
            if let Some(i) = infer_at {
                if known == 0 || total % known != 0 {
                    return Err(shape_err(node, "Reshape cannot infer -1 extent"));
                }
                out[i] = total / known;
            } else if known != total {
                return Err(shape_err(node, format!("Reshape {s:?} to {new:?} changes element count")));
            }
            vec![(out, in_dtype(g, node, 0)?)]
        }
        Squeeze => {
            let s = in_shape(g, node, 0)?;
            let axes: Vec<usize> = node
                .ints_attr("axes")
                .map(|v| v.iter().map(|&a| a as usize).collect())
                .unwrap_or_default();
            let mut out = Vec::new();
            for (i, &e) in s.iter().enumerate() {
                let squeeze = if axes.is_empty() { e == 1 } else { axes.contains(&i) };
                if squeeze {
                    if e != 1 {
                        return Err(shape_err(node, "Squeeze axis extent not 1"));
                    }
                } else {
                    out.push(e);
                }
            }
            vec![(out, in_dtype(g, node, 0)?)]
        }
        Pad => {
            let s = in_shape(g, node, 0)?;
            let p = ints(node, "paddings")?;
            if p.len() != 2 * s.len() {
                return Err(shape_err(node, "Pad paddings length mismatch"));
            }
            let out = s
                .iter()
                .enumerate()
                .map(|(i, &e)| e + p[2 * i] as usize + p[2 * i + 1] as usize)
                .collect();
            vec![(out, in_dtype(g, node, 0)?)]
        }
        Tile => {
            let s = in_shape(g, node, 0)?;
            let m = ints(node, "multiples")?;
            if m.len() != s.len() {
                return Err(shape_err(node, "Tile multiples rank mismatch"));
            }
            let out = s.iter().zip(&m).map(|(&e, &k)| e * k as usize).collect();
            vec![(out, in_dtype(g, node, 0)?)]
        }
        Slice => {
            let s = in_shape(g, node, 0)?;
            let begin = ints(node, "begin")?;
            let size = ints(node, "size")?;
            if begin.len() != s.len() || size.len() != s.len() {
                return Err(shape_err(node, "Slice begin/size rank mismatch"));
            }
            let mut out = Vec::with_capacity(s.len());
            for i in 0..s.len() {
                let b = begin[i] as usize;
                let len = if size[i] == -1 { s[i] - b } else { size[i] as usize };
                if b + len > s[i] {
                    return Err(shape_err(node, "Slice out of bounds"));
                }
                out.push(len);
            }
            vec![(out, in_dtype(g, node, 0)?)]
        }
        Conv2D | FusedConvBnBias => {
            let x = in_shape(g, node, 0)?;
            let w = in_shape(g, node, 1)?;
            if x.len() != 4 || w.len() != 4 {
                return Err(shape_err(node, "Conv2D requires NHWC input and ABCF filter"));
            }
            if x[3] != w[2] {
                return Err(shape_err(
                    node,
                    format!("Conv2D channel mismatch: input C={} filter C={}", x[3], w[2]),
                ));
            }
            let (sh, sw, same) = conv_attrs(node);
            let h = conv_out_extent(x[1], w[0], sh, same)
                .ok_or_else(|| shape_err(node, "Conv2D kernel exceeds input height"))?;
            let wid = conv_out_extent(x[2], w[1], sw, same)
                .ok_or_else(|| shape_err(node, "Conv2D kernel exceeds input width"))?;
            vec![(vec![x[0], h, wid, w[3]], declared_dtype(g, node, 0))]
        }
        DepthwiseConv2D => {
            let x = in_shape(g, node, 0)?;
            let w = in_shape(g, node, 1)?;
            if x.len() != 4 || w.len() != 4 || x[3] != w[2] {
                return Err(shape_err(node, "DepthwiseConv2D shape mismatch"));
            }
            let (sh, sw, same) = conv_attrs(node);
            let h = conv_out_extent(x[1], w[0], sh, same)
                .ok_or_else(|| shape_err(node, "DepthwiseConv2D kernel exceeds input"))?;
            let wid = conv_out_extent(x[2], w[1], sw, same)
                .ok_or_else(|| shape_err(node, "DepthwiseConv2D kernel exceeds input"))?;
            vec![(vec![x[0], h, wid, w[2] * w[3]], declared_dtype(g, node, 0))]
        }
        MatMul => {
            let a = in_shape(g, node, 0)?;
            let b = in_shape(g, node, 1)?;
            if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
                return Err(shape_err(node, format!("MatMul shapes {a:?} x {b:?}")));
            }
            vec![(vec![a[0], b[1]], declared_dtype(g, node, 0))]
        }
        BiasAdd => {
            let x = in_shape(g, node, 0)?.to_vec();
            let b = in_shape(g, node, 1)?;
            if b.len() != 1 || x.last() != b.first() {
                return Err(shape_err(node, "BiasAdd bias must match trailing channel"));
            }
            vec![(x, declared_dtype(g, node, 0))]
        }
        FusedBatchNorm => {
            let x = in_shape(g, node, 0)?.to_vec();
            let c = *x.last().unwrap_or(&1);
            for i in 1..=4 {
                let p = in_shape(g, node, i)?;
                if p != [c] {
                    return Err(shape_err(node, "FusedBatchNorm parameter shape mismatch"));
                }
            }
            vec![(x, in_dtype(g, node, 0)?)]
        }
        MaxPool | AvgPool => {
            let x = in_shape(g, node, 0)?;
            if x.len() != 4 {
                return Err(shape_err(node, "pooling requires NHWC input"));
            }
            let ks = ints(node, "ksize")?;
            let (sh, sw, same) = conv_attrs(node);
            let h = conv_out_extent(x[1], ks[0] as usize, sh, same)
                .ok_or_else(|| shape_err(node, "pool window exceeds input"))?;
            let w = conv_out_extent(x[2], ks[1] as usize, sw, same)
                .ok_or_else(|| shape_err(node, "pool window exceeds input"))?;
            vec![(vec![x[0], h, w, x[3]], in_dtype(g, node, 0)?)]
        }
        Quantize => {
            let s = in_shape(g, node, 0)?.to_vec();
            if in_dtype(g, node, 0)? != DType::F32 {
                return Err(dtype_err(node, "Quantize requires F32 input"));
            }
            vec![(s, DType::I8)]
        }
        Dequantize => {
            let s = in_shape(g, node, 0)?.to_vec();
            if in_dtype(g, node, 0)? != DType::I8 {
                return Err(dtype_err(node, "Dequantize requires I8 input"));
            }
            vec![(s, DType::F32)]
        }
        Loop => {
            // Loop-carried contract: output i has the shape/dtype of input i.
            node.inputs
                .iter()
                .map(|&t| (g.tensor(t).shape.clone(), g.tensor(t).dtype))
                .collect()
        }
    };
    Ok(out)
}
