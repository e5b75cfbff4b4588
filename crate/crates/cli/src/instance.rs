//! Instance resolution: recipe → generator, inline → direct construction,
//! file → nested spec. Keeps the concrete plant and objective next to the
//! assembled `Problem` so reports and the exact integrator can reach the
//! matrices.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use fbopt_core::geometry::PolyhedralSet;
use fbopt_core::plant::LtiPlant;
use fbopt_core::problem::{
    random_instance, InstanceOptions, Objective, Problem, QuadraticObjective,
};

use crate::error::CliError;
use crate::schema::{
    BoxData, ConstraintData, InlineInstance, InstanceSpec, MatrixData, RecipeSpec,
};

pub struct ResolvedInstance {
    pub plant: LtiPlant,
    pub objective: QuadraticObjective,
    pub output_constraint: Option<(DMatrix<f64>, DVector<f64>)>,
    pub input_box: Option<(DVector<f64>, DVector<f64>)>,
    /// Normalized spec (recipe or inline) recorded in summaries for replay.
    pub spec: InstanceSpec,
}

impl ResolvedInstance {
    pub fn problem(&self) -> Result<Problem, CliError> {
        let mut problem = Problem::new(
            Box::new(self.objective.clone()),
            Arc::new(self.plant.clone()),
        );
        if let Some((matrix, rhs)) = &self.output_constraint {
            problem = problem.with_output_constraint(matrix.clone(), rhs.clone())?;
        }
        if let Some((lower, upper)) = &self.input_box {
            let set = PolyhedralSet::from_box(lower.clone(), upper.clone())?;
            problem = problem.with_input_set(set)?;
        }
        Ok(problem)
    }

    pub fn state_dim(&self) -> usize {
        self.plant.a().nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.plant.b().ncols()
    }
}

pub fn resolve(spec: &InstanceSpec, base_dir: &Path) -> Result<ResolvedInstance, CliError> {
    match spec {
        InstanceSpec::Recipe(recipe) => resolve_recipe(recipe),
        InstanceSpec::Inline(inline) => resolve_inline(inline),
        InstanceSpec::File { path } => {
            let full = base_dir.join(path);
            let text = std::fs::read_to_string(&full)?;
            let nested: InstanceSpec = serde_json::from_str(&text)?;
            if matches!(nested, InstanceSpec::File { .. }) {
                return Err(CliError::Config(String::from(
                    "instance files must not reference further files",
                )));
            }
            resolve(&nested, base_dir)
        }
    }
}

fn resolve_recipe(recipe: &RecipeSpec) -> Result<ResolvedInstance, CliError> {
    if recipe.version != 1 {
        return Err(CliError::Config(format!(
            "unknown instance recipe version {}",
            recipe.version
        )));
    }
    let options = InstanceOptions {
        hurwitz_margin: recipe.hurwitz_margin,
        hessian_regularization: recipe.hessian_regularization,
        output_constraints: recipe.output_constraints,
    };
    let mut inst = random_instance(recipe.n, recipe.p, recipe.seed, options)?;
    if recipe.state_dominant {
        inst.objective.hessian_xu.fill(0.0);
        inst.objective.hessian_uu = DMatrix::identity(recipe.p, recipe.p) * 0.1;
        inst.objective.linear_u.fill(0.0);
    }
    Ok(ResolvedInstance {
        plant: inst.plant,
        objective: inst.objective,
        output_constraint: inst.output_constraint,
        input_box: None,
        spec: InstanceSpec::Recipe(recipe.clone()),
    })
}

fn resolve_inline(inline: &InlineInstance) -> Result<ResolvedInstance, CliError> {
    let a = inline.a.to_matrix()?;
    let b = inline.b.to_matrix()?;
    let w = DVector::from_column_slice(&inline.w);
    let plant = LtiPlant::new(a, b, w)?;
    let mut objective = QuadraticObjective::new(
        inline.hessian_xx.to_matrix()?,
        inline.hessian_xu.to_matrix()?,
        inline.hessian_uu.to_matrix()?,
        DVector::from_column_slice(&inline.linear_x),
        DVector::from_column_slice(&inline.linear_u),
        inline.offset,
    )?;
    if inline.l1_weight_x > 0.0 {
        objective = objective.with_l1_weight(inline.l1_weight_x);
    }
    let output_constraint = match &inline.constraint {
        Some(c) => Some((
            c.matrix.to_matrix()?,
            DVector::from_column_slice(&c.rhs),
        )),
        None => None,
    };
    let input_box = inline.input_box.as_ref().map(|bx| {
        (
            DVector::from_column_slice(&bx.lower),
            DVector::from_column_slice(&bx.upper),
        )
    });
    Ok(ResolvedInstance {
        plant,
        objective,
        output_constraint,
        input_box,
        spec: InstanceSpec::Inline(Box::new(inline.clone())),
    })
}

/// Serializes a resolved instance back to an inline spec (used when a recipe
/// instance must be archived in a self-contained form).
pub fn to_inline(inst: &ResolvedInstance) -> InlineInstance {
    InlineInstance {
        a: MatrixData::from_matrix(inst.plant.a()),
        b: MatrixData::from_matrix(inst.plant.b()),
        w: inst.plant.disturbance().iter().cloned().collect(),
        hessian_xx: MatrixData::from_matrix(&inst.objective.hessian_xx),
        hessian_xu: MatrixData::from_matrix(&inst.objective.hessian_xu),
        hessian_uu: MatrixData::from_matrix(&inst.objective.hessian_uu),
        linear_x: inst.objective.linear_x.iter().cloned().collect(),
        linear_u: inst.objective.linear_u.iter().cloned().collect(),
        offset: inst.objective.offset,
        l1_weight_x: inst.objective.l1_weight_x(),
        constraint: inst.output_constraint.as_ref().map(|(m, r)| ConstraintData {
            matrix: MatrixData::from_matrix(m),
            rhs: r.iter().cloned().collect(),
        }),
        input_box: inst.input_box.as_ref().map(|(lo, hi)| BoxData {
            lower: lo.iter().cloned().collect(),
            upper: hi.iter().cloned().collect(),
        }),
    }
}

/// The scalar reference instance ẋ = −x + u with Φ = ½x².
pub fn scalar_reference() -> Result<ResolvedInstance, CliError> {
    let inline = InlineInstance {
        a: MatrixData {
            rows: 1,
            cols: 1,
            data: vec![-1.0],
        },
        b: MatrixData {
            rows: 1,
            cols: 1,
            data: vec![1.0],
        },
        w: vec![0.0],
        hessian_xx: MatrixData {
            rows: 1,
            cols: 1,
            data: vec![1.0],
        },
        hessian_xu: MatrixData {
            rows: 1,
            cols: 1,
            data: vec![0.0],
        },
        hessian_uu: MatrixData {
            rows: 1,
            cols: 1,
            data: vec![0.0],
        },
        linear_x: vec![0.0],
        linear_u: vec![0.0],
        offset: 0.0,
        l1_weight_x: 0.0,
        constraint: None,
        input_box: None,
    };
    resolve_inline(&inline)
}
